"""Desk-scale simulator and benchmark harness for open-vocabulary
fetch-and-place: procedural apartment scenes, a kinematic mobile
manipulator, semantic mapping, frontier exploration with fast-marching
planning, heuristic grasp/place policies, staged success metrics, reward
signals, and a newline-delimited JSON protocol for external agents.
"""

__version__ = "0.1.0"
