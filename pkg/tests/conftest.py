import json
import pathlib

import pytest

from skyroute.plan import TransferJob
from skyroute.regions import RegionId, load_region_graph

FIXTURES = pathlib.Path(__file__).resolve().parent.parent / "fixtures"


def load_fixture(name):
    base = FIXTURES / name
    return load_region_graph(str(base / "grid.csv"), str(base / "prices.csv"),
                             str(base / "vmspecs.csv"))


def fixture_job(name, **constraint):
    doc = json.loads((FIXTURES / name / "job.json").read_text())
    if not constraint:
        if "throughput_floor_gbps" in doc:
            constraint = {"throughput_floor_gbps": doc["throughput_floor_gbps"]}
        else:
            constraint = {"throughput_floor_gbps": 1.0}
    return TransferJob(RegionId.parse(doc["src"]), RegionId.parse(doc["dst"]),
                       doc["volume_gb"], **constraint)


@pytest.fixture(scope="session")
def fig1_graph():
    return load_fixture("fig1")


@pytest.fixture(scope="session")
def fig1_endpoints():
    return RegionId.parse("azure:centralcanada"), RegionId.parse("gcp:asia-northeast1")


@pytest.fixture(scope="session")
def table2_graph():
    return load_fixture("table2")


@pytest.fixture(scope="session")
def shift_graph():
    return load_fixture("shift")


@pytest.fixture(scope="session")
def pareto12_graph():
    return load_fixture("pareto12")


@pytest.fixture(scope="session")
def rounding_instances():
    out = []
    for inst in sorted((FIXTURES / "rounding").iterdir()):
        doc = json.loads((inst / "job.json").read_text())
        graph = load_region_graph(str(inst / "grid.csv"), str(inst / "prices.csv"),
                                  str(inst / "vmspecs.csv"))
        job = TransferJob(RegionId.parse(doc["src"]), RegionId.parse(doc["dst"]),
                          doc["volume_gb"],
                          throughput_floor_gbps=doc["throughput_floor_gbps"])
        out.append((inst.name, graph, job))
    return out
