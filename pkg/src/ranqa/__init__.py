"""Restorative adversarial networks for no-reference image quality assessment."""
