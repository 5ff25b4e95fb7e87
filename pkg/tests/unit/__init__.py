"""Unit tests module"""
