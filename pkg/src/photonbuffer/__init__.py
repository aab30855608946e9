"""Recirculating single-photon buffer simulator."""
