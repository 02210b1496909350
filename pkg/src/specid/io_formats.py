"""File formats: ENVI cubes, library CSVs, hierarchy JSON, and result writers.

Wavelengths are converted to micrometers on load. All writers are
deterministic: two writes of the same objects are byte-identical.
"""

from __future__ import annotations

import csv
import json
import os
import re
from dataclasses import dataclass

import numpy as np

from .aggregate import IdentificationTree, InclusionReport, ModelPosterior
from .core import BandGrid, ImageCube, Spectrum, SpectralLibrary
from .errors import ParseError

DATA_TYPES = {2: np.dtype("int16"), 4: np.dtype("float32"),
              5: np.dtype("float64"), 12: np.dtype("uint16")}
INTEGER_SCALE_DEFAULT = 10000.0
_MICRON_UNITS = {"micrometers", "micrometer", "microns", "micron", "um", "µm"}
_NANO_UNITS = {"nanometers", "nanometer", "nm"}


@dataclass(frozen=True, eq=False)
class EnviHeader:
    """Parsed subset of an ENVI header; wavelengths already in micrometers."""

    samples: int
    lines: int
    bands: int
    interleave: str
    data_type: int
    byte_order: int
    wavelength: tuple
    wavelength_units: str
    bbl: tuple | None = None
    reflectance_scale_factor: float | None = None
    header_offset: int = 0

    def __post_init__(self):
        if min(self.samples, self.lines, self.bands) <= 0:
            raise ParseError("samples, lines, and bands must be positive")
        if self.interleave not in ("bsq", "bil", "bip"):
            raise ParseError("unknown interleave %r" % self.interleave)
        if self.data_type not in DATA_TYPES:
            raise ParseError("unsupported data type code %r (known: %s)"
                             % (self.data_type, sorted(DATA_TYPES)))
        if self.byte_order not in (0, 1):
            raise ParseError("byte order must be 0 or 1, got %r" % self.byte_order)
        if len(self.wavelength) != self.bands:
            raise ParseError("wavelength lists %d values for %d bands"
                             % (len(self.wavelength), self.bands))
        if self.bbl is not None and len(self.bbl) != self.bands:
            raise ParseError("bbl lists %d values for %d bands"
                             % (len(self.bbl), self.bands))


def _split_header_fields(text: str) -> dict:
    if not text.lstrip().lower().startswith("envi"):
        raise ParseError("not an ENVI header: missing ENVI magic line")
    fields = {}
    body = text.lstrip()[4:]
    for match in re.finditer(r"^\s*([A-Za-z][A-Za-z0-9 _]*?)\s*=", body, re.M):
        key = match.group(1).strip().lower()
        rest = body[match.end():]
        if rest.lstrip().startswith("{"):
            start = rest.index("{") + 1
            end = rest.find("}", start)
            if end < 0:
                raise ParseError("unterminated { list for ENVI key %r" % key)
            value = rest[start:end]
        else:
            value = rest.split("\n", 1)[0]
        fields[key] = value.strip()
    return fields


def _number_list(raw: str, key: str) -> tuple:
    items = [tok for tok in re.split(r"[,\s]+", raw.strip()) if tok]
    try:
        return tuple(float(tok) for tok in items)
    except ValueError:
        raise ParseError("non-numeric entry in %r list" % key) from None


def parse_envi_header(text: str) -> EnviHeader:
    """Parse ENVI header text (key = value lines, {...} for lists)."""
    fields = _split_header_fields(text)

    def need(key):
        if key not in fields:
            raise ParseError("ENVI header is missing required key %r" % key)
        return fields[key]

    def need_int(key):
        try:
            return int(need(key))
        except ValueError:
            raise ParseError("ENVI key %r must be an integer, got %r"
                             % (key, fields[key])) from None

    raw_wl = _number_list(need("wavelength"), "wavelength")
    units = fields.get("wavelength units", "").strip().lower()
    if units in _MICRON_UNITS:
        scale = 1.0
        units = "um"
    elif units in _NANO_UNITS:
        scale = 1e-3
        units = "nm"
    elif units:
        raise ParseError("unknown wavelength units %r" % fields["wavelength units"])
    else:
        # undeclared: real band centers below ~100 can only be micrometers
        scale, units = (1e-3, "nm") if (raw_wl and max(raw_wl) > 100.0) else (1.0, "um")
    bbl = _number_list(fields["bbl"], "bbl") if "bbl" in fields else None
    factor = None
    if "reflectance scale factor" in fields:
        try:
            factor = float(fields["reflectance scale factor"])
        except ValueError:
            raise ParseError("reflectance scale factor must be numeric") from None
    return EnviHeader(
        samples=need_int("samples"),
        lines=need_int("lines"),
        bands=need_int("bands"),
        interleave=need("interleave").strip().lower(),
        data_type=need_int("data type"),
        byte_order=need_int("byte order"),
        wavelength=tuple(w * scale for w in raw_wl),
        wavelength_units=units,
        bbl=bbl,
        reflectance_scale_factor=factor,
        header_offset=int(fields.get("header offset", "0") or 0),
    )


def _find_data_file(header_path: str) -> str:
    stem = header_path[:-4] if header_path.lower().endswith(".hdr") else header_path
    for candidate in (stem, stem + ".img", stem + ".dat", stem + ".raw", stem + ".bin"):
        if os.path.isfile(candidate) and os.path.abspath(candidate) != os.path.abspath(header_path):
            return candidate
    raise ParseError("no data file found next to header %r" % header_path)


def read_envi(header_path: str, data_path: str | None = None) -> ImageCube:
    """Load an ENVI cube into canonical (row, col, band) float64 order.

    Integer cubes are divided by the reflectance scale factor (default
    10000); bad bands listed in bbl are dropped and the grid adjusted.
    """
    with open(header_path, "r", encoding="utf-8", errors="replace") as fh:
        header = parse_envi_header(fh.read())
    if data_path is None:
        data_path = _find_data_file(header_path)
    dtype = DATA_TYPES[header.data_type]
    dtype = dtype.newbyteorder("<" if header.byte_order == 0 else ">")
    count = header.samples * header.lines * header.bands
    expected = count * dtype.itemsize + header.header_offset
    actual = os.path.getsize(data_path)
    if actual != expected:
        raise ParseError("data file %r holds %d bytes, expected %d "
                         "(%dx%dx%d of %s plus offset %d)"
                         % (data_path, actual, expected, header.lines,
                            header.samples, header.bands, dtype, header.header_offset))
    raw = np.fromfile(data_path, dtype=dtype, count=count,
                      offset=header.header_offset)
    if header.interleave == "bsq":
        cube = raw.reshape(header.bands, header.lines, header.samples).transpose(1, 2, 0)
    elif header.interleave == "bil":
        cube = raw.reshape(header.lines, header.bands, header.samples).transpose(0, 2, 1)
    else:  # bip
        cube = raw.reshape(header.lines, header.samples, header.bands)
    cube = cube.astype(np.float64)
    if dtype.kind in "iu":
        factor = header.reflectance_scale_factor or INTEGER_SCALE_DEFAULT
        cube = cube / factor
    wavelengths = np.array(header.wavelength)
    if header.bbl is not None:
        good = np.array([b != 0 for b in header.bbl])
        cube = cube[:, :, good]
        wavelengths = wavelengths[good]
    return ImageCube(BandGrid(wavelengths), cube)


def read_library(csv_path: str, hierarchy_path: str | None = None) -> SpectralLibrary:
    """Load a library CSV (wavelength column + one column per spectrum).

    The first header cell must be wavelength_um or wavelength_nm; the
    hierarchy JSON maps spectrum name to its class-label path (root first,
    excluding the implicit library root). Names without an entry fall under
    "Unlabeled".
    """
    with open(csv_path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [row for row in rows if row and any(cell.strip() for cell in row)]
    if len(rows) < 3:
        raise ParseError("library CSV %r needs a header and at least 2 band rows"
                         % csv_path)
    header = [cell.strip() for cell in rows[0]]
    unit_key = header[0].lower()
    if unit_key == "wavelength_um":
        scale = 1.0
    elif unit_key == "wavelength_nm":
        scale = 1e-3
    else:
        raise ParseError("first column must be wavelength_um or wavelength_nm, got %r"
                         % header[0])
    names = header[1:]
    if not names:
        raise ParseError("library CSV %r has no spectrum columns" % csv_path)
    width = len(header)
    table = np.empty((len(rows) - 1, width))
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise ParseError("row %d of %r has %d cells, expected %d"
                             % (i, csv_path, len(row), width))
        try:
            table[i - 2] = [float(cell) for cell in row]
        except ValueError:
            bad = next(cell for cell in row if not _is_number(cell))
            raise ParseError("non-numeric cell %r in row %d of %r"
                             % (bad, i, csv_path)) from None
    paths = {}
    if hierarchy_path is not None:
        with open(hierarchy_path, "r", encoding="utf-8") as fh:
            content = fh.read().strip()
        try:
            mapping = json.loads(content) if content else {}
        except json.JSONDecodeError as exc:
            raise ParseError("hierarchy file %r is not valid JSON: %s"
                             % (hierarchy_path, exc)) from None
        if not isinstance(mapping, dict):
            raise ParseError("hierarchy file %r must hold a JSON object" % hierarchy_path)
        for name, path in mapping.items():
            if not isinstance(path, list) or not all(isinstance(p, str) for p in path):
                raise ParseError("hierarchy entry %r must map to a list of labels" % name)
            paths[name] = tuple(path)
    grid = BandGrid(table[:, 0] * scale)
    spectra = tuple(
        Spectrum(name, grid, table[:, j + 1], paths.get(name, ("Unlabeled",)))
        for j, name in enumerate(names))
    return SpectralLibrary(grid, spectra)


def _is_number(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False


def read_spectrum_csv(path: str) -> Spectrum:
    """Load a single-spectrum CSV (same layout as a one-column library)."""
    library = read_library(path)
    if len(library.spectra) != 1:
        raise ParseError("%r holds %d spectra, expected exactly 1"
                         % (path, len(library.spectra)))
    first = library.spectra[0]
    return Spectrum(first.name, first.grid, first.values)


def read_table(csv_path: str, response: str):
    """Read a plain numeric CSV; returns (y, X, predictor_names).

    First row holds column headers; `response` names the regressand.
    """
    with open(csv_path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [row for row in rows if row and any(cell.strip() for cell in row)]
    if len(rows) < 2:
        raise ParseError("table CSV %r needs a header row and data rows" % csv_path)
    header = [cell.strip() for cell in rows[0]]
    if len(set(header)) != len(header):
        raise ParseError("duplicate column names in %r" % csv_path)
    if response not in header:
        raise ParseError("response column %r not found; columns are %r"
                         % (response, header))
    table = np.empty((len(rows) - 1, len(header)))
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ParseError("row %d of %r has %d cells, expected %d"
                             % (i, csv_path, len(row), len(header)))
        try:
            table[i - 2] = [float(cell) for cell in row]
        except ValueError:
            bad = next(cell for cell in row if not _is_number(cell))
            raise ParseError("non-numeric cell %r in row %d of %r"
                             % (bad, i, csv_path)) from None
    ridx = header.index(response)
    keep = [j for j in range(len(header)) if j != ridx]
    return table[:, ridx], table[:, keep], tuple(header[j] for j in keep)


def _dot_escape(text: str) -> str:
    return text.replace("\\", "\\\\").replace('"', '\\"')


def render_tree_dot(tree: IdentificationTree, conditional: bool = False) -> str:
    """DOT digraph text; one node per class labeled name + 4-decimal p.

    With `conditional`, labels show probability divided by the parent's
    (stored values stay absolute); edges follow the ascending-probability
    child order.
    """
    lines = ["digraph identification {", "  node [shape=box];"]
    edges = []

    def emit(path, node, parent_prob):
        node_id = "/".join(("",) + path) or "/"
        shown = node.probability
        if conditional and parent_prob is not None:
            shown = node.probability / parent_prob if parent_prob > 0 else 0.0
        lines.append('  "%s" [label="%s\\np=%.4f"];'
                     % (_dot_escape(node_id), _dot_escape(node.name), shown))
        for child in node.children:
            edges.append((node_id, "/".join(("",) + path + (child.name,))))
            emit(path + (child.name,), child, node.probability)

    emit((), tree.root, None)
    for src, dst in edges:
        lines.append('  "%s" -> "%s";' % (_dot_escape(src), _dot_escape(dst)))
    lines.append("}")
    return "\n".join(lines) + "\n"


def write_tree_dot(tree: IdentificationTree, path: str,
                   conditional: bool = False) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(render_tree_dot(tree, conditional=conditional))


def _tree_payload(node) -> dict:
    return {"name": node.name, "p": node.probability,
            "children": [_tree_payload(child) for child in node.children]}


def results_payload(posterior: ModelPosterior, report: InclusionReport,
                    tree: IdentificationTree | None) -> dict:
    """The results JSON structure (tree may be None in tabular mode)."""
    models = [{"regressors": list(m.regressors),
               "coefficients": [float(c) for c in m.coefficients],
               "bic": m.bic,
               "probability": float(p)}
              for m, p in posterior.items()]
    return {
        "models": models,
        "inclusion": {name: float(p) for name, p in
                      zip(report.names, report.probabilities)},
        "averaged_coefficients": {name: float(c) for name, c in
                                  zip(report.names, report.coefficients)},
        "tree": _tree_payload(tree.root) if tree is not None else None,
    }


def write_results_json(posterior: ModelPosterior, report: InclusionReport,
                       tree: IdentificationTree | None, path: str) -> None:
    payload = results_payload(posterior, report, tree)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_inclusion_csv(report: InclusionReport, path: str) -> None:
    """PIP percentages and averaged coefficients, one row per regressor."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["regressor", "inclusion_percent", "averaged_coefficient"])
        for name, p, c in zip(report.names, report.probabilities, report.coefficients):
            writer.writerow([name, repr(float(p) * 100.0), repr(float(c))])
        if report.intercept is not None:
            writer.writerow(["(intercept)", repr(100.0), repr(report.intercept)])


def write_scores(scores: np.ndarray, bin_path: str, json_path: str,
                 extra: dict | None = None) -> None:
    """Flat float64 row-major dump plus a JSON metadata sidecar."""
    scores = np.asarray(scores, dtype=np.float64)
    with open(bin_path, "wb") as fh:
        fh.write(np.ascontiguousarray(scores).tobytes())
    meta = {"rows": int(scores.shape[0]), "cols": int(scores.shape[1]),
            "dtype": "float64", "order": "row-major"}
    meta.update(extra or {})
    with open(json_path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_rois_json(rois, path: str) -> None:
    payload = [{"rank": i + 1,
                "pixels": [[int(r), int(c)] for r, c in roi.pixels],
                "peak_score": roi.peak_score,
                "mean_score": roi.mean_score,
                "average": [float(v) for v in roi.average.values]}
               for i, roi in enumerate(rois)]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def read_rois_json(path: str) -> list:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError("ROI file %r is not valid JSON: %s" % (path, exc)) from None
    if not isinstance(payload, list):
        raise ParseError("ROI file %r must hold a JSON list" % path)
    for entry in payload:
        if "pixels" not in entry:
            raise ParseError("ROI entry without pixel coordinates in %r" % path)
    return payload
