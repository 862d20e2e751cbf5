"""Distributed linear localization from inter-node distances.

Modules: ``geometry`` (Cayley-Menger volumes, inclusion test, barycentric
weights), ``scene`` (deployments, triangulation-set search), ``diloc``
(static iteration), ``robust`` (DLRE and DILAND under noise), ``mobile``
(opportunistic updates for moving agents), ``baselines`` (Kalman and
particle filters) and ``harness`` (experiments and CLI).
"""

__version__ = "0.1.0"
