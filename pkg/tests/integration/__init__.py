"""Integration tests module"""
