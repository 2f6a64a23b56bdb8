"""Helpers shared across apps (seeding)."""
