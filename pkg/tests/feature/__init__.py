"""Feature tests module"""
