"""Synthetic corpus generation package"""
