"""Unit tests for backend modules"""
