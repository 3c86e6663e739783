"""Zeek connection-log ingest package"""
