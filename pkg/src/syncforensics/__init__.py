"""Forensic toolkit for the BitTorrent Sync (v1.4/v2.0) network protocol."""

__version__ = "0.1.0"
