"""Simulated BTSync network: tracker, LAN discovery, relay, DHT and peers."""

from .dht import DhtNode, build_dht, dht_announce, dht_find_closest, dht_lookup, dht_xor_distance
from .network import LATENCY_US, Network, SimTransport
from .peer import PeerOptions, SimPeer, peer_serve_chunk, pex_exchange
from .relay import RelayEvent, RelaySession, RelayState, RelayStep, relay_advance, run_script
from .scenario import PRESETS, Scenario, load_scenario_config, parse_scenario, preset_config, preset_geo_table
from .tracker import TrackerState, tracker_expire, tracker_handle_get_peers


def build_scenario(config) -> Network:
    """Network for a scenario document (dict), parsed Scenario, or preset name."""
    if isinstance(config, str):
        config = load_scenario_config(config)
    scenario = config if isinstance(config, Scenario) else parse_scenario(config)
    return Network(scenario)


def lpd_round(network: Network, segment: str) -> list:
    """One LAN discovery round on ``segment``, replies included.

    Returns the datagrams it produced. Peer timers are not started.
    """
    start = len(network.capture)
    for peer in network.peers.values():
        if peer.segment == segment and peer.online and peer.options.use_lpd:
            network.lpd_multicast(peer)
    network.run_until(network.now_us + 10 * LATENCY_US)
    return network.capture[start:]
