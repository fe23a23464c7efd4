"""Dual-sensing driver drowsiness detection: landmark and physiological stream fusion."""

__version__ = "0.1.0"
