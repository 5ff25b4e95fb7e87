"""Learning-guided exploration module"""
