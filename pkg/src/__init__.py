"""Context-aware gate set tomography toolkit."""
