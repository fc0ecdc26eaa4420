"""Isogeometric beam model updating from static and modal data."""
