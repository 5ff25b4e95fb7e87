"""Fixture recipes"""
