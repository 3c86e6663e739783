"""Cross-validation and training package"""
