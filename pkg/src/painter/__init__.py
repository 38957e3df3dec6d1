"""In-context visual learning with task outputs painted as images."""
__version__ = "0.1.0"
