"""UAV base-station positioning and uplink power control for secrecy, via Q-learning and DQN."""

__version__ = "0.1.0"
