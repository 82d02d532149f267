"""Multi-instance finger-knuckle-print verification with feature-level fusion."""
