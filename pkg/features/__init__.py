"""Featurization and encoding package"""
