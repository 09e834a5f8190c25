"""Shared fixtures: INP documents, small networks, graphs and clustering data."""

import textwrap
from io import StringIO
from pathlib import Path

import networkx as nx
import numpy as np
import pandas as pd
import pytest

from roughcal.constants import settings
from roughcal.models import DesignMatrix
from roughcal.network import parse_inp

SINGLE_PIPE_INP = textwrap.dedent(
    """\
    [TITLE]
    Single pipe

    [JUNCTIONS]
    ;ID Elevation Demand
    J1 0 10

    [RESERVOIRS]
    R1 50

    [PIPES]
    ;ID Node1 Node2 Length Diameter Roughness
    P1 R1 J1 1000 200 0.5

    [OPTIONS]
    UNITS CMH
    HEADLOSS D-W

    [END]
    """
)

TWO_LOOP_INP = textwrap.dedent(
    """\
    [TITLE]
    Two loops

    [JUNCTIONS]
    ;ID Elevation Demand Pattern
    J1 10 0
    J2 5 20 DAY
    J3 5 30 DAY
    J4 0 25 DAY
    J5 0 15 DAY

    [RESERVOIRS]
    R1 60

    [PIPES]
    ;ID Node1 Node2 Length Diameter Roughness MinorLoss Status
    P0 R1 J1 500 300 0.1 0 OPEN
    P1 J1 J2 400 200 0.5 0 OPEN
    P2 J1 J3 400 200 0.5 0 OPEN
    P3 J2 J3 300 150 1.0 0 OPEN
    P4 J2 J4 300 150 1.0 0 OPEN
    P5 J3 J5 300 150 1.0 0 OPEN
    P6 J4 J5 300 100 2.0 0 OPEN

    [PATTERNS]
    DAY 0.6 1.0 1.4 0.8

    [TIMES]
    DURATION 4:00
    HYDRAULIC TIMESTEP 1:00

    [OPTIONS]
    UNITS CMH
    HEADLOSS D-W

    [END]
    """
)

TWO_LOOP_SIDECAR = textwrap.dedent(
    """\
    pipe_id,material,age,role,dma,calibratable
    P0,steel,30,transmission,A,false
    P1,ductile_iron,20,distribution,A,true
    P2,ductile_iron,20,distribution,A,true
    P3,pvc,10,distribution,B,true
    P4,pvc,10,distribution,B,true
    P5,cast_iron,50,distribution,B,true
    P6,cast_iron,50,distribution,B,true
    """
)


@pytest.fixture(autouse=True)
def _fixed_clock(monkeypatch: pytest.MonkeyPatch) -> None:
    """Wall times read zero and report timestamps are fixed in every test."""
    monkeypatch.setattr(settings, "fixed_clock", True)


@pytest.fixture
def single_pipe_inp() -> str:
    return SINGLE_PIPE_INP


@pytest.fixture
def two_loop_inp() -> str:
    return TWO_LOOP_INP


@pytest.fixture
def single_pipe():
    return parse_inp(SINGLE_PIPE_INP)


@pytest.fixture
def two_loop():
    return parse_inp(TWO_LOOP_INP)


@pytest.fixture
def two_loop_sidecar() -> pd.DataFrame:
    return pd.read_csv(StringIO(TWO_LOOP_SIDECAR), dtype={"pipe_id": str})


@pytest.fixture
def two_loop_files(tmp_path: Path) -> dict[str, Path]:
    """Two-loop network and its sidecar on disk."""
    inp = tmp_path / "network.inp"
    sidecar = tmp_path / "sidecar.csv"
    inp.write_text(TWO_LOOP_INP)
    sidecar.write_text(TWO_LOOP_SIDECAR)
    return {"inp": inp, "sidecar": sidecar}


@pytest.fixture
def two_cliques() -> nx.Graph:
    """Two 5-cliques joined by a single edge."""
    g = nx.union(nx.complete_graph(5), nx.relabel_nodes(nx.complete_graph(5), lambda n: n + 5))
    g.add_edge(4, 5)
    return g


@pytest.fixture
def blobs() -> tuple[DesignMatrix, np.ndarray]:
    """Three well-separated Gaussian blobs of 30 points in 2-D, with their true labels."""
    rng = np.random.default_rng(7)
    centres = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
    points = np.vstack([c + rng.normal(0.0, 0.5, (30, 2)) for c in centres])
    truth = np.repeat(np.arange(3), 30)
    ids = [f"P{i}" for i in range(len(points))]
    frame = pd.DataFrame(points, index=pd.Index(ids, name="pipe_id"), columns=["a", "b"])
    return DesignMatrix(frame, {"a": "a", "b": "b"}), truth

