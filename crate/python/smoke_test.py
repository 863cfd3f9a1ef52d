"""Smoke test for the lmsoc_py extension module.

Build and install first:

    pip install maturin
    maturin build --release -m crates/python/Cargo.toml -o dist
    pip install dist/lmsoc_py-*.whl
"""

import json
import math
import tempfile
from pathlib import Path

import lmsoc_py as lm


def check_graphs():
    g = lm.ContextGraph.time_chain(1900, 2000)
    assert (g.num_nodes, g.num_edges) == (101, 100)
    assert sorted(g.neighbors("1950")) == ["1949", "1951"]
    assert g.to_text().splitlines()[0] == "nodes: 101 edges: 100"

    cities = {row[0]: (row[2], row[3]) for row in lm.builtin_cities()}
    geo = lm.ContextGraph.geo_knn(cities, k=5)
    assert geo.num_nodes == len(cities) == 50
    assert all(len(geo.neighbors(c)) >= 5 for c in cities)

    d = lm.geodesic_distance(40.7128, -74.0060, 34.0522, -118.2437)
    assert 3900 < d < 4000, d
    try:
        lm.geodesic_distance(91.0, 0.0, 0.0, 0.0)
    except ValueError:
        pass
    else:
        raise AssertionError("latitude 91 accepted")
    return g


def check_embeddings(g):
    emb = lm.embed(g, dim=16, num_walks=50, seed=3)
    again = lm.embed(g, dim=16, num_walks=50, seed=3)
    assert emb.dim == 16 and len(emb) == 101 and "1950" in emb
    assert emb.vector("1950") == again.vector("1950")
    near = emb.nearest("1950", 3)
    assert len(near) == 3 and near[0][1] >= near[-1][1]
    with tempfile.TemporaryDirectory() as d:
        p = Path(d) / "ctx.emb"
        emb.write(p)
        assert lm.ContextEmbeddings.read(p).vector("1950") == emb.vector("1950")


def check_corpus_and_metrics():
    examples, answers = lm.temporal_corpus(instances_per_template=2, seed=0)
    assert examples and answers
    years = {ctx for ctx, _ in examples}
    assert years <= {str(y) for y in range(1900, 2001)}
    assert lm.tokenize("The [MASK] Is") == ["the", "[MASK]", "is"]

    assert math.isclose(lm.mrr([1, 2, 4]), (1 + 0.5 + 0.25) / 3)
    assert lm.mean_rank([1, 3]) == 2.0
    lo, hi = lm.bootstrap_ci([0.0, 1.0, 0.5, 0.25], resamples=500, seed=1)
    assert 0.0 <= lo <= hi <= 1.0
    s = lm.summarize_distances([1.0, 2.0, 3.0, 4.0])
    assert s["median"] == 2.5 and s["count"] == 4


def check_pipeline():
    cfg = {
        "experiment": {"name": "smoke", "kind": "temporal", "seed": 0},
        "temporal": {"instances_per_template": 4},
        "walk": {"num_walks": 50},
        "train": {"total_steps": 20, "warmup_steps": 5, "batch_size": 8},
        "eval": {"resamples": 200},
    }
    with tempfile.TemporaryDirectory() as d:
        out = Path(d)
        for stage in ["build-graph", "embed", "gen-corpus", "pretrain", "evaluate"]:
            written = lm.run_stage(stage, out, json.dumps(cfg))
            assert written and all(Path(p).exists() for p in written), stage
        report = json.loads((out / "reports" / "report.json").read_text())
        assert {r["model"] for r in report["cloze"]} == {"BERT", "LMCTRL", "LMSOC"}

        soc = lm.Model.load(out / "checkpoints" / "soc.ckpt", out / "contexts.emb")
        none = lm.Model.load(out / "checkpoints" / "none.ckpt")
        assert soc.mode == "soc" and none.mode == "none"
        assert soc.num_params == none.num_params
        top = soc.predict("the president is [MASK]", "1950", k=5)
        assert len(top) == 5 and top[0][1] >= top[-1][1]
        rank = soc.rank_of_answer("the president is [MASK]", "1950", [top[2][0]])
        assert rank is not None and rank <= 3
        assert len(soc.mask_logits("the president is [MASK]", "1950")) == len(soc.vocab)
        try:
            lm.Model.load(out / "checkpoints" / "soc.ckpt")
        except ValueError:
            pass
        else:
            raise AssertionError("SOC model loaded without context vectors")


if __name__ == "__main__":
    graph = check_graphs()
    check_embeddings(graph)
    check_corpus_and_metrics()
    check_pipeline()
    print("lmsoc_py smoke test OK")
