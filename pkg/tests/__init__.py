"""Test suite module"""
