"""PHASE score banding package"""
