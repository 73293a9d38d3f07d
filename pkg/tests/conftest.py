import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mbmac import topology as T
from mbmac.grouping import build_grouping
from mbmac.schedule import LinkSystem

# Chain PHY at 600 MHz, 50 m spacing: data reaches one hop, the lowest
# modulation reaches two hops, so links conflict within distance three.
CHAIN_RATE_TABLE = ((48.0, 1),)
CHAIN_DECODE_DB = 44.0


def chain_setup(n_nodes, radios=1, rate_table=CHAIN_RATE_TABLE, decode_db=CHAIN_DECODE_DB,
                seed=1):
    dep = T.generate_chain(n_nodes, 50.0, T.single_band_plan(), radios=radios)
    phy = T.PhyModel(rate_table=rate_table, decode_margin_db=decode_db)
    links = T.enumerate_generalized_links(dep, phy)
    linksys = LinkSystem.from_deployment(dep, links)
    band_graphs = [T.build_band_graph(dep, b, phy) for b in dep.bands]
    grouping = build_grouping(band_graphs[0], dep.node_ids, links, seed=seed)
    return dep, phy, links, linksys, band_graphs, grouping


@pytest.fixture
def chain5():
    return chain_setup(5)


@pytest.fixture
def chain7():
    return chain_setup(7)
