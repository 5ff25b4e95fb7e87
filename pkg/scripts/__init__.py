"""Scripts and utilities module"""
