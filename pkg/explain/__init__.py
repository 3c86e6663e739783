"""Shapley explanation package"""
