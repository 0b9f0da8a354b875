import math

import pytest

from skyroute.errors import GridParseError, UnknownPairError, UnknownRegionError
from skyroute.regions import (
    RegionId,
    VmSpec,
    dump_grid,
    dump_prices,
    dump_vmspecs,
    egress_bill,
    load_region_graph,
    vm_bill,
)


def write_graph_files(tmp_path, grid, prices, vmspecs):
    g = tmp_path / "grid.csv"
    p = tmp_path / "prices.csv"
    v = tmp_path / "vmspecs.csv"
    g.write_text(grid)
    p.write_text(prices)
    v.write_text(vmspecs)
    return str(g), str(p), str(v)


VMSPECS_ABC = """\
# region,cost_per_hour,nic,egress,ingress,conn,vmcap
aws:a,1.5,10.0,5.0,10.0,64,4
aws:b,1.5,10.0,5.0,10.0,64,4
gcp:c,2.0,16.0,7.0,16.0,32,2
"""

GRID_ABC = """\
aws:a,aws:b,4.0
aws:b,aws:a,4.0
aws:a,gcp:c,2.5
gcp:c,aws:a,2.5
aws:b,gcp:c,3.0
gcp:c,aws:b,3.0
"""

PRICES_ABC = """\
aws:a,aws:b,0.02
aws:b,aws:a,0.02
aws:a,gcp:c,0.09
gcp:c,aws:a,0.12
aws:b,gcp:c,0.09
gcp:c,aws:b,0.12
"""


@pytest.fixture
def abc_graph(tmp_path):
    return load_region_graph(*write_graph_files(tmp_path, GRID_ABC, PRICES_ABC, VMSPECS_ABC))


def test_region_id_roundtrip():
    rid = RegionId.parse("azure:centralcanada")
    assert rid.provider == "azure"
    assert rid.region == "centralcanada"
    assert rid.canonical() == "azure:centralcanada"
    assert RegionId.parse(rid.canonical()) == rid


def test_region_id_rejects_bare_token():
    with pytest.raises(ValueError):
        RegionId.parse("uswest2")


def test_load_three_regions_six_edges(abc_graph):
    assert len(abc_graph) == 3
    assert len(abc_graph.edges()) == 6
    assert abc_graph.throughput_gbps(RegionId("aws", "a"), RegionId("aws", "b")) == 4.0


def test_missing_grid_pair_means_zero_capacity(tmp_path):
    grid = "aws:a,aws:b,4.0\n"
    prices = "aws:a,aws:b,0.02\naws:a,gcp:c,0.09\n"
    graph = load_region_graph(*write_graph_files(tmp_path, grid, prices, VMSPECS_ABC))
    a, c = RegionId("aws", "a"), RegionId("gcp", "c")
    assert graph.throughput_gbps(a, c) == 0.0
    assert not graph.has_edge(a, c)


def test_usable_edge_without_price_is_error(tmp_path):
    grid = "aws:a,aws:b,4.0\n"
    prices = "# nothing priced\n"
    with pytest.raises(GridParseError, match="missing price"):
        load_region_graph(*write_graph_files(tmp_path, grid, prices, VMSPECS_ABC))


def test_unknown_region_in_pair_is_error(tmp_path):
    grid = "aws:a,aws:nowhere,4.0\n"
    with pytest.raises(GridParseError, match="unknown region"):
        load_region_graph(*write_graph_files(tmp_path, grid, PRICES_ABC, VMSPECS_ABC))


def test_negative_value_is_parse_error(tmp_path):
    grid = "aws:a,aws:b,-4.0\n"
    with pytest.raises(GridParseError, match="non-negative"):
        load_region_graph(*write_graph_files(tmp_path, grid, PRICES_ABC, VMSPECS_ABC))


def test_malformed_line_is_parse_error(tmp_path):
    grid = "aws:a,aws:b\n"
    with pytest.raises(GridParseError, match="expected 3 fields"):
        load_region_graph(*write_graph_files(tmp_path, grid, PRICES_ABC, VMSPECS_ABC))


def test_duplicate_pair_is_error(tmp_path):
    grid = "aws:a,aws:b,4.0\naws:a,aws:b,5.0\n"
    with pytest.raises(GridParseError, match="duplicate pair"):
        load_region_graph(*write_graph_files(tmp_path, grid, PRICES_ABC, VMSPECS_ABC))


def test_egress_bill_examples(abc_graph):
    a, b, c = (RegionId("aws", "a"), RegionId("aws", "b"), RegionId("gcp", "c"))
    # 450 GB at 0.09 USD/GB
    assert egress_bill(abc_graph, a, c, 450.0) == pytest.approx(40.50, abs=1e-6)
    assert egress_bill(abc_graph, a, b, 0.0) == 0.0
    # 100 GB at the 0.02 USD/GB intra-provider tier
    assert egress_bill(abc_graph, a, b, 100.0) == pytest.approx(2.00, abs=1e-6)


def test_egress_bill_linearity(abc_graph):
    for u, v in abc_graph.edges():
        for vol in (1.0, 13.7, 450.0):
            assert egress_bill(abc_graph, u, v, 2 * vol) == pytest.approx(
                2 * egress_bill(abc_graph, u, v, vol), rel=1e-12)


def test_egress_bill_unknown_pair(tmp_path):
    grid = "aws:a,aws:b,4.0\n"
    prices = "aws:a,aws:b,0.02\n"
    graph = load_region_graph(*write_graph_files(tmp_path, grid, prices, VMSPECS_ABC))
    with pytest.raises(UnknownPairError):
        egress_bill(graph, RegionId("aws", "b"), RegionId("gcp", "c"), 10.0)


def test_vm_bill_examples(abc_graph):
    a = RegionId("aws", "a")
    assert vm_bill(abc_graph, a, 1, 3600.0) == pytest.approx(1.50, abs=1e-6)
    assert vm_bill(abc_graph, a, 0, 3600.0) == 0.0
    # 4 VMs at 1.5 USD/hr for half an hour: 4 * 1.5 * 0.5
    assert vm_bill(abc_graph, a, 4, 1800.0) == pytest.approx(3.00, abs=1e-6)


def test_vm_bill_unknown_region(abc_graph):
    with pytest.raises(UnknownRegionError):
        vm_bill(abc_graph, RegionId("aws", "z"), 1, 10.0)


def test_serialization_round_trip_is_bit_exact(abc_graph, tmp_path):
    paths = write_graph_files(
        tmp_path / "rt" if (tmp_path / "rt").mkdir() or True else tmp_path,
        dump_grid(abc_graph), dump_prices(abc_graph), dump_vmspecs(abc_graph))
    again = load_region_graph(*paths)
    assert again.regions == abc_graph.regions
    assert again.vm_caps == abc_graph.vm_caps
    assert again.specs == abc_graph.specs
    assert (again.throughput == abc_graph.throughput).all()
    # NaN-aware price comparison
    for i in range(len(again)):
        for j in range(len(again)):
            x, y = again.price[i, j], abc_graph.price[i, j]
            assert (math.isnan(x) and math.isnan(y)) or x == y
    # and the dumped text itself is stable
    assert dump_grid(again) == dump_grid(abc_graph)
    assert dump_prices(again) == dump_prices(abc_graph)
    assert dump_vmspecs(again) == dump_vmspecs(abc_graph)


def test_vmspec_validation():
    with pytest.raises(ValueError):
        VmSpec(0.0, 10, 5, 10, 64)
    with pytest.raises(ValueError):
        VmSpec(1.0, 10, 11, 10, 64)  # egress above NIC
    with pytest.raises(ValueError):
        VmSpec(1.0, 10, 5, 10, 0)


def test_restricted_to_edge(abc_graph):
    a, b = RegionId("aws", "a"), RegionId("aws", "b")
    direct = abc_graph.restricted_to_edge(a, b)
    assert direct.edges() == [(a, b)]
    assert direct.throughput_gbps(a, b) == 4.0
