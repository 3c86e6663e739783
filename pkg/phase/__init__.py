"""PHASE network package"""
