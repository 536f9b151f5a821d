import json

import numpy as np
import pytest

from sobalign import io as sio
from sobalign.align import DistanceWeights, distance_matrix
from sobalign.cli import main
from sobalign.errors import FormatError, HistogramError, InputError
from sobalign.klds import estimate, validate
from sobalign.synth import SynthSpec, synth_dataset

from _common import random_descriptor, random_stream


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_stream_round_trip(tmp_path):
    Y = random_stream(np.random.default_rng(0), 5, 9)
    sio.write_stream(Y, tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "bin_0,bin_1,bin_2,bin_3,bin_4"
    back = sio.read_stream(tmp_path / "s.csv")
    assert np.max(np.abs(back - Y / Y.sum(axis=0))) <= 1e-15


def test_stream_row_mass(tmp_path):
    f = tmp_path / "bad.csv"
    f.write_text("bin_0,bin_1\n0.5,0.5\n0.5,1.0\n")
    with pytest.raises(HistogramError, match="line 3"):
        sio.read_stream(f)
    f.write_text("bin_0,bin_1\n0.5,0.5000005\n")
    Y = sio.read_stream(f)
    assert Y.sum() == pytest.approx(1.0, abs=1e-15)


def test_stream_parse_errors(tmp_path):
    f = tmp_path / "x.csv"
    f.write_text("bin_0,bin_1\n0.5,abc\n")
    with pytest.raises(FormatError, match=r"line 2, column 1"):
        sio.read_stream(f)
    f.write_text("a,b\n0.5,0.5\n")
    with pytest.raises(FormatError, match="header"):
        sio.read_stream(f)
    f.write_text("bin_0,bin_1\n0.5,0.5,0\n")
    with pytest.raises(FormatError, match="expected 2 columns"):
        sio.read_stream(f)


def test_descriptor_round_trip(tmp_path):
    theta = random_descriptor(np.random.default_rng(1), 3)
    sio.write_descriptor(theta, tmp_path / "d.json")
    back = sio.read_descriptor(tmp_path / "d.json")
    for name in ("A", "Y", "alpha", "beta"):
        np.testing.assert_array_equal(getattr(back, name), getattr(theta, name))
    assert validate(back) == validate(theta)


def test_descriptor_errors(tmp_path):
    theta = random_descriptor(np.random.default_rng(2), 2)
    doc = sio.descriptor_to_dict(theta)
    broken = dict(doc)
    del broken["beta"]
    with pytest.raises(FormatError, match="'beta'"):
        sio.descriptor_from_dict(broken)
    wide = dict(doc, A=[row + [0.0] for row in doc["A"]])
    with pytest.raises(FormatError, match="expected 2 x 2"):
        sio.descriptor_from_dict(wide)
    with pytest.raises(FormatError, match="version"):
        sio.descriptor_from_dict(dict(doc, version=99))
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(FormatError, match="line 1"):
        sio.read_descriptor(tmp_path / "bad.json")


def test_manifest(tmp_path):
    Y = random_stream(np.random.default_rng(3), 4, 6)
    sio.write_stream(Y, tmp_path / "sub" / "a.csv")
    sio.write_manifest([("sub/a.csv", "x")], tmp_path / "m.json")
    [(p, lab)] = sio.read_manifest(tmp_path / "m.json")
    assert p == tmp_path / "sub" / "a.csv" and lab == "x"
    sio.write_manifest([("sub/a.csv", "x"), ("nope.csv", "y")], tmp_path / "m2.json")
    with pytest.raises(InputError, match="nope.csv"):
        sio.read_manifest(tmp_path / "m2.json")


def test_atomic_write_leaves_no_temp(tmp_path):
    sio.atomic_write_text(tmp_path / "f.txt", "abc")
    assert [p.name for p in tmp_path.iterdir()] == ["f.txt"]


def test_synth_deterministic_and_noise_free():
    a = synth_dataset(SynthSpec(per_class=3, N=20))
    b = synth_dataset(SynthSpec(per_class=3, N=20))
    for (la, Ya), (lb, Yb) in zip(a, b):
        assert la == lb
        np.testing.assert_array_equal(Ya, Yb)
    c = synth_dataset(SynthSpec(per_class=3, N=20, within_class_noise=0.0))
    for k in range(3):
        block = [Y for lab, Y in c if lab == f"class_{k}"]
        for Y in block[1:]:
            np.testing.assert_array_equal(Y, block[0])
    with pytest.raises(InputError):
        SynthSpec(per_class=0)


@pytest.mark.slow
def test_synth_default_class_structure():
    data = synth_dataset(SynthSpec())
    ts = [estimate(Y, 4) for _, Y in data]
    labels = np.array([lab for lab, _ in data])
    D = distance_matrix(ts, None, DistanceWeights(0.25, 0.0))
    same = labels[:, None] == labels[None, :]
    off = ~np.eye(len(ts), dtype=bool)
    assert D[same & off].mean() < D[~same].mean()


def test_cli_synth_bit_identical(tmp_path, capsys):
    for d in ("a", "b"):
        assert run(capsys, "synth", "--classes", 2, "--per-class", 2, "--N", 12,
                   "--out-dir", tmp_path / d)[0] == 0
    for f in sorted((tmp_path / "a" / "streams").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / "streams" / f.name).read_bytes()


def test_cli_estimate_dist_validate(tmp_path, capsys):
    Y = random_stream(np.random.default_rng(4), 6, 15)
    sio.write_stream(Y, tmp_path / "s.csv")
    code, out, _ = run(capsys, "estimate", "--input", tmp_path / "s.csv", "--order", 2,
                       "--output", tmp_path / "d.json")
    assert code == 0 and json.loads(out)["passed"]
    code, out, _ = run(capsys, "dist", "--a", tmp_path / "d.json", "--b", tmp_path / "d.json")
    res = json.loads(out)
    assert code == 0 and res["dist_sq"] <= 1e-10 and res["det_sign"] == 1
    code, out, _ = run(capsys, "validate", "--input", tmp_path / "d.json")
    assert code == 0 and json.loads(out)["passed"]
    bad = sio.descriptor_to_dict(sio.read_descriptor(tmp_path / "d.json"))
    bad["A"] = [[3.0 * x for x in row] for row in bad["A"]]
    bad["A"][0][0] += 2.0
    (tmp_path / "bad.json").write_text(json.dumps(bad))
    assert run(capsys, "validate", "--input", tmp_path / "bad.json")[0] == 1


def test_cli_exit_codes(tmp_path, capsys):
    (tmp_path / "bad.csv").write_text("bin_0,bin_1\n0.5,1.0\n")
    code, _, err = run(capsys, "estimate", "--input", tmp_path / "bad.csv", "--order", 1,
                       "--output", tmp_path / "o.json")
    assert code == 1 and "line 2" in err
    (tmp_path / "const.csv").write_text("bin_0,bin_1\n" + "0.5,0.5\n" * 4)
    code, _, err = run(capsys, "estimate", "--input", tmp_path / "const.csv", "--order", 1,
                       "--output", tmp_path / "o.json")
    assert code == 2 and "numerical" in err
    assert not (tmp_path / "o.json").exists()
    sio.write_manifest([("missing.csv", "a")], tmp_path / "m.json")
    code, _, err = run(capsys, "distmat", "--manifest", tmp_path / "m.json", "--order", 1)
    assert code == 1 and "missing" in err


def test_cli_workflows(tmp_path, capsys):
    assert run(capsys, "synth", "--classes", 2, "--per-class", 3, "--test-per-class", 1,
               "--N", 20, "--p", 6, "--out-dir", tmp_path)[0] == 0
    train, test = tmp_path / "train.json", tmp_path / "test.json"
    code, out, _ = run(capsys, "estimate", "--manifest", train, "--order", 2,
                       "--output", tmp_path / "desc")
    assert code == 0 and json.loads(out)["count"] == 6
    dtrain = tmp_path / "desc" / "manifest.json"
    assert run(capsys, "distmat", "--manifest", dtrain, "--output", tmp_path / "D.csv")[0] == 0
    rows = (tmp_path / "D.csv").read_text().splitlines()
    assert len(rows) == 7
    code, out, _ = run(capsys, "mean", "--manifest", dtrain, "--output", tmp_path / "mean.json")
    assert code == 0 and validate(sio.read_descriptor(tmp_path / "mean.json")).passed
    assert (tmp_path / "mean_cost.csv").read_text().startswith("iteration,cost")
    code, out, _ = run(capsys, "classify", "--train", dtrain, "--test", test, "--order", 2,
                       "--mode", "ncc", "--center", "medoid", "--output-dir", tmp_path / "cls")
    assert code == 0 and 0 <= json.loads(out)["accuracy"] <= 1
    assert (tmp_path / "cls" / "confusion.csv").exists()
    code, out, _ = run(capsys, "classify", "--train", dtrain, "--test", dtrain, "--mode", "nn",
                       "--exclude-self")
    assert code == 0
    code, out, _ = run(capsys, "cv", "--train", dtrain, "--folds", 2, "--lambda-a-grid", "0.1,1",
                       "--lambda-mu-grid", "0", "--output", tmp_path / "cv.csv")
    assert code == 0 and json.loads(out)["best_lambda_a"] in (0.1, 1.0)
    assert (tmp_path / "cv.csv").read_text().splitlines()[0] == "lambda_a,lambda_mu,accuracy"


def test_cli_loo_matches_api(tmp_path, capsys):
    from sobalign.classify import LabeledDataset, nn_classify
    run(capsys, "synth", "--classes", 2, "--per-class", 3, "--N", 20, "--p", 6,
        "--out-dir", tmp_path)
    code, out, _ = run(capsys, "classify", "--train", tmp_path / "train.json", "--test",
                       tmp_path / "train.json", "--order", 2, "--mode", "nn", "--exclude-self")
    ds = LabeledDataset([(estimate(sio.read_stream(p), 2), lab)
                         for p, lab in sio.read_manifest(tmp_path / "train.json")])
    expected = nn_classify(ds, ds, DistanceWeights(0.25, 0.0), exclude_self=True).accuracy
    assert json.loads(out)["accuracy"] == expected
