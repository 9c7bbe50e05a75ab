import json

import pytest

from greencap import climate, instance
from greencap.cli import main

from _family import comfortable_instance, tiny_instance


@pytest.fixture()
def small_setup(tmp_path):
    inst, clusters = tiny_instance(1)
    inst_path = tmp_path / "inst.json"
    cl_path = tmp_path / "clusters.json"
    instance.save(inst, inst_path)
    climate.save_clusters(clusters, cl_path)
    return inst, clusters, inst_path, cl_path


def test_cluster_command_shipped_data(tmp_path):
    out = tmp_path / "clusters.json"
    rc = main(["cluster", "--clusters", "10", "--seed", "3", "--out", str(out)])
    assert rc == 0
    specs = climate.load_clusters(out)
    assert len(specs) == 10
    assert sum(c.probability for c in specs) == pytest.approx(1.0, abs=1e-12)
    rc = main(["cluster", "--clusters", "1", "--seed", "3",
               "--out", str(tmp_path / "one.json")])
    assert rc == 0
    (one,) = climate.load_clusters(tmp_path / "one.json")
    assert one.probability == 1.0


def test_cluster_command_too_many_clusters_exit4(tmp_path):
    rc = main(["cluster", "--clusters", "1000", "--seed", "0",
               "--out", str(tmp_path / "x.json")])
    assert rc == 4


def test_gen_instances_deterministic(tmp_path, small_setup):
    inst, clusters, inst_path, cl_path = small_setup
    rc = main(["gen-instances", "--base", str(inst_path), "--count", "3",
               "--seed", "7", "--out", str(tmp_path / "fam1")])
    assert rc == 0
    rc = main(["gen-instances", "--base", str(inst_path), "--count", "3",
               "--seed", "7", "--out", str(tmp_path / "fam2")])
    assert rc == 0
    for i in range(3):
        a = (tmp_path / "fam1" / f"instance_{i:04d}.json").read_text()
        b = (tmp_path / "fam2" / f"instance_{i:04d}.json").read_text()
        assert a == b
    loaded = instance.load(tmp_path / "fam1" / "instance_0000.json")
    assert instance.validate(loaded) == []
    assert 0.01 <= loaded.tau <= 0.20


def test_solve_ccg_dro_and_artifacts(tmp_path, small_setup):
    inst, clusters, inst_path, cl_path = small_setup
    out = tmp_path / "run"
    rc = main(["solve", "--instance", str(inst_path), "--clusters", str(cl_path),
               "--method", "ccg-dro", "--out", str(out)])
    doc = json.loads((out / "outcome.json").read_text())
    if rc == 0:
        assert doc["status"] == "optimal"
        assert (out / "decision.json").exists()
        assert (out / "bound_trace.csv").exists()
    else:
        assert rc == 2 and doc["status"] == "dro-infeasible"
    manifest = json.loads((out / "manifest.json").read_text())
    assert "instance_sha256" in manifest


def test_solve_methods_agree(tmp_path):
    inst, clusters = comfortable_instance(3, tau=0.05)
    inst_path = tmp_path / "inst.json"
    cl_path = tmp_path / "clusters.json"
    instance.save(inst, inst_path)
    climate.save_clusters(clusters, cl_path)
    rc1 = main(["solve", "--instance", str(inst_path), "--clusters", str(cl_path),
                "--method", "ccg-dro", "--out", str(tmp_path / "a")])
    rc2 = main(["solve", "--instance", str(inst_path), "--clusters", str(cl_path),
                "--method", "basic-ccg", "--out", str(tmp_path / "b")])
    assert rc1 == 0 and rc2 == 0
    a = json.loads((tmp_path / "a" / "outcome.json").read_text())
    b = json.loads((tmp_path / "b" / "outcome.json").read_text())
    assert a["objective"] == pytest.approx(b["objective"], abs=1e-5 * max(1, abs(a["objective"])))
    assert b["iterations"] >= a["iterations"]


def test_solve_saa_sp(tmp_path, small_setup):
    inst, clusters, inst_path, cl_path = small_setup
    out = tmp_path / "sp"
    rc = main(["solve", "--instance", str(inst_path), "--clusters", str(cl_path),
               "--method", "saa-sp", "--sampler", "uniform",
               "--samples-per-cluster", "12", "--seed", "5", "--out", str(out)])
    doc = json.loads((out / "outcome.json").read_text())
    assert doc["sampler"]["kind"] == "uniform"
    assert (out / "samples.json").exists()
    assert rc in (0, 2)


def test_evaluate_command(tmp_path):
    inst, clusters = comfortable_instance(4, tau=0.0)
    inst_path = tmp_path / "inst.json"
    cl_path = tmp_path / "clusters.json"
    instance.save(inst, inst_path)
    climate.save_clusters(clusters, cl_path)
    run = tmp_path / "run"
    assert main(["solve", "--instance", str(inst_path), "--clusters", str(cl_path),
                 "--method", "ccg-dro", "--out", str(run)]) == 0
    out = tmp_path / "eval"
    rc = main(["evaluate", "--instance", str(inst_path), "--clusters", str(cl_path),
               "--decision", str(run / "decision.json"), "--mode", "worstcase",
               "--label", "dro", "--out", str(out)])
    assert rc == 0
    rep = json.loads((out / "report.json").read_text())
    solved = json.loads((run / "outcome.json").read_text())
    assert rep["feasible"] is True
    assert rep["total_cost"] == pytest.approx(solved["objective"], abs=1e-4)


def test_missing_input_exit4(tmp_path):
    rc = main(["solve", "--instance", str(tmp_path / "nope.json"),
               "--clusters", str(tmp_path / "nope2.json"),
               "--out", str(tmp_path / "o")])
    assert rc == 4


def test_encode_dataset_smoke(tmp_path, small_setup):
    inst, clusters, inst_path, cl_path = small_setup
    records = climate.make_synthetic_climate(seed=1, years=range(2000, 2004),
                                             regions=[f"r{i}" for i in range(inst.n_factories)])
    climate.save_climate_csv(records, tmp_path / "climate.csv")
    out = tmp_path / "dataset"
    rc = main(["encode-dataset", "--base", str(inst_path),
               "--climate", str(tmp_path / "climate.csv"),
               "--count", "3", "--demand-samples", "16",
               "--images-per-item", "2", "--rows", "10",
               "--seed", "2", "--out", str(out)])
    assert rc == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["item_count"] >= 2
    assert (out / "features.csv").exists()
    pbms = list((out / "images").glob("*.pbm"))
    assert len(pbms) == manifest["item_count"]


def test_experiment_harness_and_determinism(tmp_path):
    inst, clusters = comfortable_instance(5, tau=0.0, sizes=(1, 1, 1, 2))
    base_path = tmp_path / "base.json"
    cl_path = tmp_path / "clusters.json"
    instance.save(inst, base_path)
    climate.save_clusters(clusters, cl_path)
    fam = tmp_path / "family"
    assert main(["gen-instances", "--base", str(base_path), "--count", "2",
                 "--seed", "1", "--tau-range", "0.0", "0.0",
                 "--out", str(fam)]) == 0
    out1 = tmp_path / "exp1"
    rc = main(["experiment", "--instances", str(fam), "--clusters", str(cl_path),
               "--methods", "ccg-dro", "--out", str(out1)])
    assert rc == 0
    agg1 = (out1 / "aggregate.csv").read_text()
    assert agg1.count("ccg-dro") == 2
    out2 = tmp_path / "exp2"
    assert main(["experiment", "--instances", str(fam), "--clusters", str(cl_path),
                 "--methods", "ccg-dro", "--out", str(out2)]) == 0
    # identical aggregate modulo timing columns
    import csv

    def stable(path):
        with open(path) as fh:
            rows = list(csv.DictReader(fh))
        return [(r["instance"], r["method"], r["status"], r["objective"],
                 r["iterations"]) for r in rows]

    assert stable(out1 / "aggregate.csv") == stable(out2 / "aggregate.csv")


def test_compare_command(tmp_path):
    inst, clusters = comfortable_instance(6, tau=0.0, sizes=(1, 1, 1, 2))
    inst_path = tmp_path / "inst.json"
    cl_path = tmp_path / "clusters.json"
    instance.save(inst, inst_path)
    climate.save_clusters(clusters, cl_path)
    run = tmp_path / "run"
    assert main(["solve", "--instance", str(inst_path), "--clusters", str(cl_path),
                 "--method", "ccg-dro", "--out", str(run)]) == 0
    for label, mode in (("wc", "worstcase"), ("sm", "sampled")):
        assert main(["evaluate", "--instance", str(inst_path),
                     "--clusters", str(cl_path),
                     "--decision", str(run / "decision.json"), "--mode", mode,
                     "--samples-per-cluster", "8",
                     "--label", label, "--out", str(tmp_path / label)]) == 0
    out = tmp_path / "cmp"
    rc = main(["compare", "--reports",
               f"wc={tmp_path / 'wc' / 'report.json'}",
               f"sm={tmp_path / 'sm' / 'report.json'}",
               "--out", str(out)])
    assert rc == 0
    table = json.loads((out / "comparison.json").read_text())
    assert set(table["groups"]) == {"wc", "sm"}
    assert (out / "comparison.csv").exists()


def test_config_file_overrides_flags(tmp_path, small_setup):
    inst, clusters, inst_path, cl_path = small_setup
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"clusters": 2}))
    out = tmp_path / "c.json"
    rc = main(["--config", str(cfg), "cluster", "--clusters", "5",
               "--seed", "0", "--out", str(out)])
    assert rc == 0
    assert len(climate.load_clusters(out)) == 2
