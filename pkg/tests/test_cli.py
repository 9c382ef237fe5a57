"""
End-to-end tests of the iterdeconv command line
"""

import csv
from pathlib import Path

import numpy as np
import pytest

from iterdeconv import __version__
from iterdeconv.blur_model import Observation, quantize, synthetic_scene
from iterdeconv.cli import dispatch, read_run_manifest
from iterdeconv.fcnn import identity_weights
from iterdeconv.hyper import tune_gamma0
from iterdeconv.image_io import read_image, read_kernel, save_weights, write_image, write_kernel, write_pairs
from iterdeconv.kernel import BlurKernel
from iterdeconv.metrics import MetricReport, psnr
from iterdeconv.pipeline import PipelineConfig


FIXTURES = Path(__file__).parent / "fixtures"


def run(*argv) -> int:
    return dispatch(["--profile", "test", *map(str, argv)])


def test_unknown_flag_and_missing_command_exit_with_usage_error():
    assert dispatch(["--frobnicate"]) == 2
    assert dispatch([]) == 2


def test_version(capsys):
    assert dispatch(["--version"]) == 0
    assert __version__ in capsys.readouterr().out


def test_gradcheck_command(capsys):
    assert run("gradcheck", "--size", 6, "--seed", 1) == 0
    assert capsys.readouterr().out.splitlines()[-1].startswith("max\t")


def test_kernel_gen_replays_byte_identically(tmp_path):
    out = tmp_path / "k.txt"
    assert run("kernel-gen", "--size", 15, "--seed", 3, "--out", out) == 0
    original = out.read_bytes()
    manifest_path = tmp_path / "k.txt.manifest.json"
    manifest = read_run_manifest(manifest_path)
    assert manifest.subcommand == "kernel-gen"
    assert manifest.seeds == {"seed": 3}
    assert manifest.tool_version == __version__

    out.unlink()
    assert dispatch(["--replay", str(manifest_path)]) == 0
    assert out.read_bytes() == original
    assert read_kernel(out).shape == (15, 15)


@pytest.fixture
def blurred_scene(tmp_path):
    clean = quantize(synthetic_scene(17, 64))
    write_image(tmp_path / "clean.pgm", clean)
    write_kernel(tmp_path / "k.txt", BlurKernel.gaussian(9, 1.6))
    assert run("blur", "--in", tmp_path / "clean.pgm", "--kernel", tmp_path / "k.txt",
               "--noise", 0.005, "--seed", 2, "--out", tmp_path / "y.pgm") == 0
    return tmp_path


def test_deblur_improves_psnr(blurred_scene):
    clean = read_image(blurred_scene / "clean.pgm")
    y = read_image(blurred_scene / "y.pgm")
    obs = Observation(clean, read_kernel(blurred_scene / "k.txt"), y)
    gamma0, _ = tune_gamma0([obs], np.geomspace(1.0, 1e5, 21).tolist())

    out = blurred_scene / "x.pgm"
    assert run("deblur", "--in", blurred_scene / "y.pgm", "--kernel", blurred_scene / "k.txt",
               "--gamma0", gamma0, "--out", out) == 0
    assert psnr(read_image(out), clean) > psnr(y, clean)


def test_deblur_of_the_bundled_sample_beats_the_blurry_input(tmp_path):
    with open(FIXTURES / "sample.tsv", newline="", encoding="utf-8") as f:
        (sample,) = list(csv.DictReader(f, delimiter="\t"))
    clean = read_image(FIXTURES / sample["reference"])
    blurry = FIXTURES / sample["image"]
    reference_psnr = float(sample["psnr"])
    assert psnr(read_image(blurry), clean) == pytest.approx(reference_psnr, abs=1e-6)

    out = tmp_path / "x.pgm"
    assert run("deblur", "--in", blurry, "--kernel", FIXTURES / sample["kernel"],
               "--gamma0", 1000, "--out", out) == 0
    assert psnr(read_image(out), clean) > reference_psnr
    assert (tmp_path / "x.pgm.manifest.json").exists()


def test_deblur_with_weights_records_them(blurred_scene):
    weights = blurred_scene / "w.bin"
    cfg = PipelineConfig(gamma0=400.0, gammas=[200.0], weights=[identity_weights(4)])
    save_weights(weights, cfg.to_archive(), allow_narrow=True)
    out = blurred_scene / "x1.pgm"
    assert run("deblur", "--in", blurred_scene / "y.pgm", "--kernel", blurred_scene / "k.txt",
               "--weights", weights, "--dump-intermediate", blurred_scene / "stages", "--out", out) == 0
    assert read_image(out).shape == (64, 64)
    manifest = read_run_manifest(blurred_scene / "x1.pgm.manifest.json")
    assert str(weights) in manifest.inputs
    assert (blurred_scene / "stages" / "stage_1.pgm").exists()

    assert run("deblur", "--in", blurred_scene / "y.pgm", "--kernel", blurred_scene / "k.txt",
               "--weights", weights, "--iterations", 5, "--out", out) == 1


def test_missing_input_fails_cleanly(tmp_path):
    assert run("deblur", "--in", tmp_path / "nope.pgm", "--kernel", tmp_path / "k.txt",
               "--out", tmp_path / "x.pgm") == 1


def test_eval_command(blurred_scene, capsys):
    write_pairs(blurred_scene / "pairs.tsv", [(blurred_scene / "clean.pgm", blurred_scene / "y.pgm")])
    assert run("eval", "--pairs", blurred_scene / "pairs.tsv", "--out", blurred_scene / "report.tsv") == 0
    report = MetricReport.read(blurred_scene / "report.tsv")
    assert report.names == ["y.pgm"]
    assert capsys.readouterr().out.startswith("mean\tpsnr=")


@pytest.fixture
def tiny_dataset(tmp_path):
    data = tmp_path / "data"
    assert run("synth", "--scenes", 2, "--scene-size", 40, "--count", 1, "--kernel-sizes", 11,
               "--patch", 32, "--seed", 1, "--out", data) == 0
    assert (data / "run_manifest.json").exists()
    return data / "manifest.tsv"


def test_training_commands_are_identical_across_thread_counts(tmp_path, tiny_dataset):
    outputs = {}
    for threads in (1, 2):
        denoiser = tmp_path / f"d{threads}.bin"
        hyper = tmp_path / f"h{threads}.bin"
        assert dispatch(["--profile", "test", "--threads", str(threads), "train-denoiser",
                         "--data", str(tiny_dataset), "--stage", "1", "--iters", "2",
                         "--out", str(denoiser)]) == 0
        assert dispatch(["--profile", "test", "--threads", str(threads), "train-hyper",
                         "--data", str(tiny_dataset), "--weights", str(denoiser),
                         "--iters", "1", "--restarts", "2", "--out", str(hyper)]) == 0
        outputs[threads] = [p.read_bytes() for p in (denoiser, hyper,
                                                      tmp_path / f"d{threads}.bin.log.tsv")]
    assert outputs[1] == outputs[2]

    manifest = read_run_manifest(tmp_path / "d1.bin.manifest.json")
    assert manifest.subcommand == "train-denoiser"
    assert manifest.config["profile"] == "test"
    assert str(tmp_path / "d1.bin.log.tsv") in manifest.outputs


def test_second_stage_needs_the_first(tmp_path, tiny_dataset):
    assert run("train-denoiser", "--data", tiny_dataset, "--stage", 2, "--iters", 1,
               "--out", tmp_path / "w.bin") == 1


def test_replay_uses_the_recorded_configuration(tmp_path, monkeypatch):
    monkeypatch.setenv("DECONV_PROFILE", "test")
    data = tmp_path / "data"
    assert dispatch(["synth", "--scenes", "2", "--count", "1", "--seed", "4", "--out", str(data)]) == 0
    recorded = read_run_manifest(data / "run_manifest.json")
    assert recorded.config["synthesis"]["patch_size"] == 32
    originals = {p.relative_to(data): p.read_bytes() for p in data.rglob("*") if p.is_file()
                 and p.name != "run_manifest.json"}

    replayed = tmp_path / "replayed.json"
    replayed.write_text(recorded.model_dump_json())
    for path in data.rglob("*"):
        if path.is_file():
            path.unlink()
    monkeypatch.setenv("DECONV_PROFILE", "full")
    assert dispatch(["--replay", str(replayed)]) == 0
    assert {p.relative_to(data): p.read_bytes() for p in data.rglob("*") if p.is_file()
            and p.name != "run_manifest.json"} == originals
    assert read_run_manifest(data / "run_manifest.json").config == recorded.config


def test_replay_of_an_unreadable_manifest_fails(tmp_path):
    assert dispatch(["--replay", str(tmp_path / "absent.json")]) == 1
    (tmp_path / "broken.json").write_text("{\"argv\": 3}")
    assert dispatch(["--replay", str(tmp_path / "broken.json")]) == 1


def test_zero_threads_is_a_usage_error(tmp_path):
    assert dispatch(["--profile", "test", "--threads", "0", "kernel-gen", "--size", "11",
                     "--out", str(tmp_path / "k.txt")]) == 2
    assert not (tmp_path / "k.txt").exists()
