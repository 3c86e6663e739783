"""Minimal differentiable operator library"""
