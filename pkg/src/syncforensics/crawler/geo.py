"""Geolocation through a pluggable provider; the shipped one reads a CSV."""

from __future__ import annotations

import csv
import ipaddress
from typing import Optional, Protocol

from ..errors import ProviderUnavailable
from .model import GeoRecord, Snapshot

UNKNOWN = "unknown"


class GeoProvider(Protocol):
    label: str

    def lookup(self, ip: str) -> Optional[tuple]:
        """(country, city) or None when the address is not covered."""


class CsvGeoProvider:
    """Longest-prefix match over rows of ``ip_prefix,country,city``.

    A prefix is either CIDR notation or a single address.
    """

    label = "csv"

    def __init__(self, path):
        self.path = str(path)
        try:
            with open(path, newline="", encoding="utf-8") as fh:
                rows = list(csv.DictReader(fh))
        except OSError as exc:
            raise ProviderUnavailable(f"cannot read geolocation table {path}: {exc}") from exc
        self._nets = []
        for n, row in enumerate(rows, 2):
            try:
                net = ipaddress.ip_network(row["ip_prefix"].strip(), strict=False)
                self._nets.append((net, row["country"].strip(), row["city"].strip()))
            except (KeyError, ValueError, AttributeError) as exc:
                raise ProviderUnavailable(f"{path}: bad row {n}: {exc}") from exc
        self._nets.sort(key=lambda t: -t[0].prefixlen)

    def lookup(self, ip: str):
        addr = ipaddress.ip_address(ip)
        for net, country, city in self._nets:
            if addr.version == net.version and addr in net:
                return country, city
        return None


PROVIDERS = {"csv": CsvGeoProvider}


def open_provider(name: str, *args) -> GeoProvider:
    try:
        factory = PROVIDERS[name]
    except KeyError:
        raise ProviderUnavailable(f"no geolocation provider registered as {name!r}") from None
    return factory(*args)


def geolocate(snapshot: Snapshot, provider: Optional[GeoProvider]) -> list:
    if provider is None:
        raise ProviderUnavailable("no geolocation provider configured")
    out = []
    for ip in sorted({r.external.ip for r in snapshot.records}, key=lambda s: ipaddress.ip_address(s)):
        hit = provider.lookup(ip)
        country, city = hit if hit else (UNKNOWN, UNKNOWN)
        out.append(GeoRecord(ip, country, city, provider.label))
    return out
