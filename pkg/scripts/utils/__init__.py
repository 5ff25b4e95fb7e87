"""Utility scripts module"""
