"""End-to-end command-line runs over a synthetic scene and table."""

import csv
import json
import subprocess
import sys
from types import SimpleNamespace

import numpy as np
import pytest

from conftest import write_envi_cube, write_library_csv
from specid.cli import main
from specid.core import Spectrum, SpectralLibrary
from specid.detection import background_stats, detect
from synth import make_scene, make_table_instance


def tree_lookup(node, name):
    if node["name"] == name:
        return node
    for child in node["children"]:
        found = tree_lookup(child, name)
        if found is not None:
            return found
    return None


@pytest.fixture(scope="module")
def scene(tmp_path_factory):
    root = tmp_path_factory.mktemp("scene")
    cube, library, target_names, _, implant_pixels = make_scene(0)
    hdr, _ = write_envi_cube(root, cube, stem="scene")
    lib_csv, lib_json = write_library_csv(root, library, "library")
    mean_values = np.mean([library.spectrum(n).values for n in target_names], axis=0)
    target_lib = SpectralLibrary(library.grid, (
        Spectrum("ldpe_mean", library.grid, mean_values, ("Target",)),))
    target_csv, _ = write_library_csv(root, target_lib, "target")
    # threshold at the top 0.1% of scores, computed once via the library API
    stats = background_stats(cube)
    dmap, _ = detect(cube, Spectrum("t", library.grid, mean_values), stats,
                     threshold=0.0)
    cut = float(np.quantile(dmap.scores, 0.999))
    return SimpleNamespace(root=root, hdr=str(hdr), lib_csv=str(lib_csv),
                           lib_json=str(lib_json), target_csv=str(target_csv),
                           cut=cut, implant=set(implant_pixels), cube=cube,
                           library=library, scores=dmap.scores)


@pytest.fixture(scope="module")
def detect_dir(scene, tmp_path_factory):
    out = tmp_path_factory.mktemp("detect")
    rc = main(["--output-dir", str(out), "detect",
               "--cube", scene.hdr, "--target-lib", scene.target_csv,
               "--target", "ldpe_mean", "--threshold", repr(scene.cut)])
    assert rc == 0
    return out


class TestDetect:
    def test_finds_the_implant(self, scene, detect_dir, capsys):
        rois = json.loads((detect_dir / "rois.json").read_text())
        assert len(rois) == 1
        assert {tuple(p) for p in rois[0]["pixels"]} == scene.implant
        assert rois[0]["rank"] == 1

    def test_scores_match_the_library_api(self, scene, detect_dir):
        raw = np.frombuffer((detect_dir / "scores.bin").read_bytes(),
                            dtype=np.float64)
        np.testing.assert_array_equal(raw.reshape(scene.scores.shape),
                                      scene.scores)
        meta = json.loads((detect_dir / "scores.json").read_text())
        assert meta["rows"] == 92 and meta["cols"] == 92
        assert meta["target"] == "ldpe_mean"
        assert meta["threshold"] == scene.cut

    def test_threads_do_not_change_the_bytes(self, scene, detect_dir, tmp_path):
        rc = main(["--threads", "4", "--output-dir", str(tmp_path), "detect",
                   "--cube", scene.hdr, "--target-lib", scene.target_csv,
                   "--target", "ldpe_mean", "--threshold", repr(scene.cut)])
        assert rc == 0
        assert (tmp_path / "scores.bin").read_bytes() == \
            (detect_dir / "scores.bin").read_bytes()
        assert (tmp_path / "rois.json").read_bytes() == \
            (detect_dir / "rois.json").read_bytes()

    def test_grid_mismatch_needs_resample(self, scene, tmp_path, capsys):
        # target library on a denser grid over the same range
        dense = np.linspace(0.4, 2.5, 61)
        from specid.core import BandGrid
        grid = BandGrid(dense)
        values = np.interp(dense, scene.library.grid.wavelengths,
                           scene.library.spectrum("ldpe_1").values)
        lib = SpectralLibrary(grid, (Spectrum("ldpe_dense", grid, values,
                                              ("Target",)),))
        csv_path, _ = write_library_csv(tmp_path, lib, "dense")
        argv = ["--output-dir", str(tmp_path), "detect", "--cube", scene.hdr,
                "--target-lib", str(csv_path), "--target", "ldpe_dense",
                "--threshold", "0.9"]
        assert main(argv) == 2
        assert "--resample" in capsys.readouterr().err
        assert main(argv + ["--resample"]) == 0

    def test_bad_threshold_is_an_input_error(self, scene, tmp_path, capsys):
        rc = main(["--output-dir", str(tmp_path), "detect", "--cube", scene.hdr,
                   "--target-lib", scene.target_csv, "--target", "ldpe_mean",
                   "--threshold", "1.5"])
        assert rc == 2
        assert "threshold" in capsys.readouterr().err

    def test_singular_background_is_a_numerical_error(self, scene, tmp_path):
        from specid.core import ImageCube
        flat = ImageCube(scene.library.grid,
                         np.full((4, 4, len(scene.library.grid)), 0.25))
        hdr, _ = write_envi_cube(tmp_path, flat, stem="flat")
        rc = main(["--output-dir", str(tmp_path), "detect", "--cube", str(hdr),
                   "--target-lib", scene.target_csv, "--target", "ldpe_mean"])
        assert rc == 3

    def test_missing_cube_file(self, scene, tmp_path, capsys):
        rc = main(["--output-dir", str(tmp_path), "detect",
                   "--cube", str(tmp_path / "missing.hdr"),
                   "--target-lib", scene.target_csv, "--target", "ldpe_mean"])
        assert rc == 2


@pytest.fixture(scope="module")
def identify_dir(scene, detect_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("identify")
    rc = main(["--output-dir", str(out), "identify",
               "--cube", scene.hdr, "--roi", str(detect_dir / "rois.json"),
               "--library", scene.lib_csv, "--hierarchy", scene.lib_json])
    assert rc == 0
    return out


class TestIdentify:
    def test_roi_average_identifies_the_target_class(self, identify_dir):
        results = json.loads((identify_dir / "results.json").read_text())
        ldpe = tree_lookup(results["tree"], "LDPE")
        assert ldpe is not None
        assert ldpe["p"] >= 0.9
        assert results["models"]
        assert abs(sum(m["probability"] for m in results["models"]) - 1) < 1e-9
        dot = (identify_dir / "tree.dot").read_text()
        assert dot.startswith("digraph identification {")
        assert '"/Polymer/Polyethylene/LDPE"' in dot

    def test_rerun_is_byte_identical(self, scene, detect_dir, identify_dir,
                                     tmp_path):
        rc = main(["--output-dir", str(tmp_path), "identify",
                   "--cube", scene.hdr, "--roi", str(detect_dir / "rois.json"),
                   "--library", scene.lib_csv, "--hierarchy", scene.lib_json])
        assert rc == 0
        for name in ("results.json", "tree.dot"):
            assert (tmp_path / name).read_bytes() == \
                (identify_dir / name).read_bytes()

    def test_spectrum_csv_mode(self, scene, identify_dir, tmp_path):
        # feed the ROI-average spectrum back through the single-spectrum path
        from specid.core import average_pixels
        avg = average_pixels(scene.cube, sorted(scene.implant))
        spec_csv = tmp_path / "pixel.csv"
        with open(spec_csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["wavelength_um", "pixel"])
            for wl, value in zip(scene.cube.grid.wavelengths, avg.values):
                writer.writerow([repr(float(wl)), repr(float(value))])
        rc = main(["--output-dir", str(tmp_path), "identify",
                   "--spectrum", str(spec_csv),
                   "--library", scene.lib_csv, "--hierarchy", scene.lib_json])
        assert rc == 0
        assert (tmp_path / "results.json").read_bytes() == \
            (identify_dir / "results.json").read_bytes()

    def test_background_removal_run(self, scene, detect_dir, tmp_path, capsys):
        rc = main(["--output-dir", str(tmp_path), "identify",
                   "--cube", scene.hdr, "--roi", str(detect_dir / "rois.json"),
                   "--library", scene.lib_csv, "--hierarchy", scene.lib_json,
                   "--background-removal", "--target", "ldpe_1"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "background removed" in out
        results = json.loads((tmp_path / "results.json").read_text())
        assert tree_lookup(results["tree"], "LDPE")["p"] >= 0.9

    def test_explicit_background_coordinates(self, scene, detect_dir, tmp_path):
        rc = main(["--output-dir", str(tmp_path), "identify",
                   "--cube", scene.hdr, "--roi", str(detect_dir / "rois.json"),
                   "--library", scene.lib_csv, "--hierarchy", scene.lib_json,
                   "--background-removal", "--target", "ldpe_1",
                   "--backgrounds", "0,0; 0,45; 45,0; 88,88"])
        assert rc == 0

    def test_mc3_same_seed_is_byte_identical(self, scene, detect_dir, tmp_path):
        outs = []
        for sub in ("a", "b"):
            out = tmp_path / sub
            rc = main(["--seed", "5", "--output-dir", str(out), "identify",
                       "--cube", scene.hdr, "--roi", str(detect_dir / "rois.json"),
                       "--library", scene.lib_csv, "--hierarchy", scene.lib_json,
                       "--strategy", "mc3", "--iterations", "4000"])
            assert rc == 0
            outs.append((out / "results.json").read_bytes())
        assert outs[0] == outs[1]

    def test_conditional_tree_flag(self, scene, detect_dir, tmp_path):
        rc = main(["--output-dir", str(tmp_path), "identify",
                   "--cube", scene.hdr, "--roi", str(detect_dir / "rois.json"),
                   "--library", scene.lib_csv, "--hierarchy", scene.lib_json,
                   "--conditional-tree"])
        assert rc == 0
        assert 'p=1.0000' in (tmp_path / "tree.dot").read_text()

    @pytest.mark.parametrize("extra,fragment", [
        (["--roi-index", "7"], "out of range"),
        (["--background-removal"], "--target"),
        (["--background-removal", "--target", "ldpe_1",
          "--backgrounds", "4"], "coordinate"),
    ])
    def test_input_errors_exit_2(self, scene, detect_dir, tmp_path, capsys,
                                 extra, fragment):
        rc = main(["--output-dir", str(tmp_path), "identify",
                   "--cube", scene.hdr, "--roi", str(detect_dir / "rois.json"),
                   "--library", scene.lib_csv] + extra)
        assert rc == 2
        assert fragment in capsys.readouterr().err

    def test_spectrum_and_cube_conflict(self, scene, detect_dir, tmp_path, capsys):
        rc = main(["--output-dir", str(tmp_path), "identify",
                   "--spectrum", "whatever.csv", "--cube", scene.hdr,
                   "--roi", str(detect_dir / "rois.json"),
                   "--library", scene.lib_csv])
        assert rc == 2
        assert "not both" in capsys.readouterr().err

    def test_neither_spectrum_nor_roi(self, scene, tmp_path, capsys):
        rc = main(["--output-dir", str(tmp_path), "identify",
                   "--library", scene.lib_csv])
        assert rc == 2

    def test_empty_roi_file(self, scene, tmp_path, capsys):
        empty = tmp_path / "rois.json"
        empty.write_text("[]\n")
        rc = main(["--output-dir", str(tmp_path), "identify",
                   "--cube", scene.hdr, "--roi", str(empty),
                   "--library", scene.lib_csv])
        assert rc == 2
        assert "no regions" in capsys.readouterr().err


def write_table_csv(path, y, X, names):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(names) + ["y"])
        for i in range(y.size):
            writer.writerow([repr(float(v)) for v in X[i]]
                            + [repr(float(y[i]))])


@pytest.fixture(scope="module")
def table_csv(tmp_path_factory):
    root = tmp_path_factory.mktemp("table")
    y, X, names = make_table_instance(2)
    path = root / "table.csv"
    write_table_csv(path, y, X, names)
    return str(path)


class TestBmaTable:
    def test_occam_run_and_determinism(self, table_csv, tmp_path, capsys):
        outs = []
        for sub in ("a", "b"):
            out = tmp_path / sub
            rc = main(["--output-dir", str(out), "bma-table",
                       "--csv", table_csv, "--response", "y", "--max-size", "4"])
            assert rc == 0
            outs.append(out)
        assert "bma-table:" in capsys.readouterr().out
        for name in ("inclusion.csv", "results.json"):
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
        text = (outs[0] / "inclusion.csv").read_text()
        assert text.startswith("regressor,inclusion_percent,averaged_coefficient\n")
        assert "(intercept)" in text
        results = json.loads((outs[0] / "results.json").read_text())
        assert results["tree"] is None

    def test_occam_strict_subset(self, table_csv, tmp_path):
        plain, strict = tmp_path / "plain", tmp_path / "strict"
        assert main(["--output-dir", str(plain), "bma-table", "--csv", table_csv,
                     "--response", "y", "--max-size", "4"]) == 0
        assert main(["--output-dir", str(strict), "bma-table", "--csv", table_csv,
                     "--response", "y", "--max-size", "4", "--occam-strict"]) == 0
        n_plain = len(json.loads((plain / "results.json").read_text())["models"])
        n_strict = len(json.loads((strict / "results.json").read_text())["models"])
        assert n_strict <= n_plain

    def test_mc3_same_seed_byte_identical(self, table_csv, tmp_path):
        blobs = []
        for sub in ("a", "b"):
            out = tmp_path / sub
            rc = main(["--seed", "9", "--output-dir", str(out), "bma-table",
                       "--csv", table_csv, "--response", "y",
                       "--strategy", "mc3", "--max-size", "4",
                       "--iterations", "3000"])
            assert rc == 0
            blobs.append((out / "results.json").read_bytes())
        assert blobs[0] == blobs[1]

    def test_out_flag_overrides_output_dir(self, table_csv, tmp_path):
        main_dir, override = tmp_path / "main", tmp_path / "override"
        rc = main(["--output-dir", str(main_dir), "bma-table", "--csv", table_csv,
                   "--response", "y", "--max-size", "3",
                   "--out", str(override)])
        assert rc == 0
        assert (override / "results.json").exists()
        assert not main_dir.exists()

    def test_missing_csv(self, tmp_path, capsys):
        rc = main(["--output-dir", str(tmp_path), "bma-table",
                   "--csv", str(tmp_path / "nope.csv"), "--response", "y"])
        assert rc == 2

    def test_unknown_response(self, table_csv, tmp_path, capsys):
        rc = main(["--output-dir", str(tmp_path), "bma-table",
                   "--csv", table_csv, "--response", "zz"])
        assert rc == 2
        assert "response" in capsys.readouterr().err

    def test_exhaustive_not_offered(self, table_csv, tmp_path):
        with pytest.raises(SystemExit) as err:
            main(["--output-dir", str(tmp_path), "bma-table", "--csv", table_csv,
                  "--response", "y", "--strategy", "exhaustive"])
        assert err.value.code == 2


class TestParsing:
    def test_version(self, capsys):
        with pytest.raises(SystemExit) as err:
            main(["--version"])
        assert err.value.code == 0
        assert capsys.readouterr().out.startswith("specid ")

    def test_global_flags_must_precede_the_subcommand(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as err:
            main(["bma-table", "--csv", "x.csv", "--response", "y",
                  "--output-dir", str(tmp_path)])
        assert err.value.code == 2

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "specid", "--version"],
                              capture_output=True, text=True)
        assert proc.returncode == 0
        assert proc.stdout.startswith("specid ")
