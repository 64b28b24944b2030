"""Conversational recommendation workbench.

A user's session is a run of short conversations (subsessions); each
subsession ends when the system recommends the item the user wants or the
turn budget runs out. Later subsessions start with vague interest: the
simulated user answers "unknown" to attribute questions until one of a few
activation attributes is hit. The package covers the whole loop: data
loading, graph/sequence representation learning, the conversation
environment, the two policy agents, training, metrics, and an HTTP service
for live (human or simulated) sessions.
"""

__version__ = "0.1.0"
