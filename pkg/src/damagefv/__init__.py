"""Damage assessment from aerial imagery: CRF-smoothed pixel labelling, Fisher-vector segment classification."""
__version__ = "0.1.0"
