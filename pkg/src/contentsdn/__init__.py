"""Content as a first-class SDN primitive: controller, transparent proxy,
flow-forking cache and a simulated switch fabric to run them on."""

__version__ = "0.1.0"
