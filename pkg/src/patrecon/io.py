"""On-disk formats: config files, sinograms, spectra, images, matrices and manifests."""

from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import json
import os
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import __version__
from .forward_fd import SIGN_CONVENTION, FrequencyGrid, SpectralData
from .forward_td import Sinogram
from .geometry import ImageGrid, SensorArray


class FormatError(ValueError):
    """Malformed input file; the message names the file and line."""


def stable_hash(obj) -> str:
    """SHA-256 of the canonical JSON encoding of ``obj``."""
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonable)
    return hashlib.sha256(text.encode()).hexdigest()


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


# -- key = value config files ------------------------------------------------

def read_key_values(path, allowed=None) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment. Values stay strings."""
    path = Path(path)
    out = {}
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise FormatError(f"{path}: cannot read config ({exc.strerror})") from exc
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise FormatError(f"{path}:{lineno}: empty key")
        if allowed is not None and key not in allowed:
            raise FormatError(f"{path}:{lineno}: unknown key {key!r}")
        if key in out:
            raise FormatError(f"{path}:{lineno}: duplicate key {key!r}")
        out[key] = (value, lineno)
    return out


def write_key_values(path, values: dict) -> None:
    lines = []
    for key, value in values.items():
        if isinstance(value, (list, tuple)):
            value = ",".join(_fmt(v) for v in value)
        else:
            value = _fmt(value)
        lines.append(f"{key} = {value}")
    Path(path).write_text("\n".join(lines) + "\n")


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


# -- binary payloads with a one-line text header -----------------------------

def _write_header_payload(path, header: dict, payload: np.ndarray) -> None:
    text = "# " + " ".join(f"{k}={_fmt(v)}" for k, v in header.items()) + "\n"
    with open(path, "wb") as fh:
        fh.write(text.encode("ascii"))
        fh.write(np.ascontiguousarray(payload, dtype="<f8").tobytes())


def _read_header_payload(path, required: tuple) -> tuple[dict, np.ndarray]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: cannot read ({exc.strerror})") from exc
    end = raw.find(b"\n")
    if end < 0 or not raw.startswith(b"# "):
        raise FormatError(f"{path}:1: missing '# key=value ...' header line")
    header = {}
    for item in raw[2:end].decode("ascii", errors="replace").split():
        if "=" not in item:
            raise FormatError(f"{path}:1: malformed header field {item!r}")
        k, v = item.split("=", 1)
        header[k] = v
    missing = [k for k in required if k not in header]
    if missing:
        raise FormatError(f"{path}:1: header lacks {', '.join(missing)}")
    body = raw[end + 1:]
    if len(body) % 8:
        raise FormatError(f"{path}: payload length {len(body)} is not a multiple of 8 bytes")
    return header, np.frombuffer(body, dtype="<f8").astype(float)


def write_sinogram(path, sino: Sinogram) -> None:
    """Header ``# nd= nt= dt_s= t0_s=`` then little-endian f64, sensor-major."""
    header = {"nd": sino.n_sensors, "nt": sino.n_samples, "dt_s": float(sino.dt), "t0_s": float(sino.t0)}
    _write_header_payload(path, header, sino.data)


def read_sinogram(path, sensors: SensorArray | None = None) -> Sinogram:
    header, payload = _read_header_payload(path, ("nd", "nt", "dt_s", "t0_s"))
    try:
        nd, nt = int(header["nd"]), int(header["nt"])
        dt, t0 = float(header["dt_s"]), float(header["t0_s"])
    except ValueError as exc:
        raise FormatError(f"{path}:1: bad header value ({exc})") from exc
    if payload.size != nd * nt:
        raise FormatError(f"{path}: payload holds {payload.size} values, header says {nd}x{nt}")
    return Sinogram(payload.reshape(nd, nt), dt, t0, sensors)


def write_spectra(path, spec: SpectralData) -> None:
    """Header ``# nd= nf= f0_hz= df_hz= vs_mps=`` then interleaved (re, im) f64.

    Frequencies must be uniformly spaced; ``f_p = f0 + p*df``.
    """
    fg = spec.freq_grid
    if not fg.is_uniform():
        raise ValueError("only uniformly spaced frequency grids can be written")
    df = float(fg.freqs[1] - fg.freqs[0]) if fg.n_freqs > 1 else 0.0
    header = {"nd": spec.n_sensors, "nf": fg.n_freqs, "f0_hz": float(fg.freqs[0]),
              "df_hz": df, "vs_mps": float(fg.vs), "sign": "+1"}
    if fg.indices is not None:
        header["p0"] = int(fg.indices[0])
    inter = np.empty(spec.data.shape + (2,))
    inter[..., 0] = spec.data.real
    inter[..., 1] = spec.data.imag
    _write_header_payload(path, header, inter)


def read_spectra(path, sensors: SensorArray | None = None) -> SpectralData:
    header, payload = _read_header_payload(path, ("nd", "nf", "f0_hz", "df_hz", "vs_mps"))
    try:
        nd, nf = int(header["nd"]), int(header["nf"])
        f0, df, vs = float(header["f0_hz"]), float(header["df_hz"]), float(header["vs_mps"])
    except ValueError as exc:
        raise FormatError(f"{path}:1: bad header value ({exc})") from exc
    if payload.size != nd * nf * 2:
        raise FormatError(f"{path}: payload holds {payload.size} values, header says {nd}x{nf}x2")
    pairs = payload.reshape(nd, nf, 2)
    freqs = f0 + np.arange(nf) * df
    indices = None
    if "p0" in header:
        indices = int(header["p0"]) + np.arange(nf)
    return SpectralData(pairs[..., 0] + 1j * pairs[..., 1], FrequencyGrid(freqs, vs, indices), sensors)


def is_spectra_file(path) -> bool:
    with open(path, "rb") as fh:
        first = fh.readline()
    return b" nf=" in first


def write_csv_table(path, array: np.ndarray) -> None:
    np.savetxt(path, np.asarray(array), delimiter=",", fmt="%.17g")


# -- images -------------------------------------------------------------------

def _image_files(path) -> dict:
    """The ``.pgm``/``.f64``/``.json`` triple for ``path``; dots inside the stem are kept."""
    text = str(path)
    for suffix in (".pgm", ".f64", ".json"):
        if text.endswith(suffix):
            text = text[: -len(suffix)]
            break
    return {ext: Path(text + "." + ext) for ext in ("pgm", "f64", "json")}


def write_image(path, image: ImageGrid) -> dict:
    """Write ``<stem>.pgm`` (16-bit, min-max scaled), ``<stem>.f64`` and ``<stem>.json``.

    The JSON sidecar records the grid and the intensity scale of the PGM.
    """
    files = _image_files(path)
    img = image.image()
    lo, hi = float(img.min()), float(img.max())
    span = hi - lo
    scaled = np.zeros_like(img) if span == 0 else (img - lo) / span
    q = np.round(scaled * 65535).astype(">u2")
    # PGM rows run top to bottom; image rows run along +y
    with open(files["pgm"], "wb") as fh:
        fh.write(f"P5\n{image.nx} {image.ny}\n65535\n".encode("ascii"))
        fh.write(q[::-1].tobytes())
    image.pixel_values.astype("<f8").tofile(files["f64"])
    meta = {"nx": image.nx, "ny": image.ny, "side_length_m": image.side_length,
            "center_m": list(image.center), "pgm_min": lo, "pgm_max": hi,
            "pgm_rows": "top row is maximum y", "raw": files["f64"].name}
    files["json"].write_text(json.dumps(meta, indent=2) + "\n")
    return meta


def read_image(path) -> ImageGrid:
    """Read an image written by :func:`write_image`.

    The raw ``.f64`` sibling is preferred (bit-exact); a lone PGM is rescaled
    with the sidecar's intensity range.
    """
    path = Path(path)
    files = _image_files(path)
    meta_path = files["json"]
    if not meta_path.exists():
        raise FormatError(f"{path}: missing sidecar {meta_path.name}")
    try:
        meta = json.loads(meta_path.read_text())
        nx, ny = int(meta["nx"]), int(meta["ny"])
        side = float(meta["side_length_m"])
        center = tuple(meta.get("center_m", (0.0, 0.0)))
    except (ValueError, KeyError) as exc:
        raise FormatError(f"{meta_path}: malformed sidecar ({exc})") from exc
    raw_path = files["f64"]
    if raw_path.exists():
        values = np.fromfile(raw_path, dtype="<f8")
        if values.size != nx * ny:
            raise FormatError(f"{raw_path}: holds {values.size} values, sidecar says {nx}x{ny}")
        return ImageGrid(nx, ny, side, values.astype(float), center)
    img = _read_pgm(files["pgm"])
    if img.shape != (ny, nx):
        raise FormatError(f"{path}: PGM is {img.shape[1]}x{img.shape[0]}, sidecar says {nx}x{ny}")
    lo, hi = float(meta["pgm_min"]), float(meta["pgm_max"])
    values = lo + img[::-1] / 65535.0 * (hi - lo)
    return ImageGrid(nx, ny, side, values.ravel(), center)


def _read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    if tokens[0] != b"P5":
        raise FormatError(f"{path}:1: not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    dtype = ">u2" if maxval > 255 else "u1"
    data = np.frombuffer(raw[pos + 1:], dtype=dtype, count=w * h)
    return data.reshape(h, w).astype(float) * (65535.0 / maxval)


def write_image_csv(path, image: ImageGrid) -> None:
    """One CSV row per image row, lowest y first."""
    write_csv_table(path, image.image())


def read_image_csv(path, side_length: float, center=(0.0, 0.0)) -> ImageGrid:
    try:
        arr = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    ny, nx = arr.shape
    return ImageGrid(nx, ny, side_length, arr.ravel(), center)


# -- sensor geometry ----------------------------------------------------------

def write_sensors_csv(path, sensors: SensorArray) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# radius_m={sensors.radius!r} center_x_m={sensors.center[0]!r} "
                 f"center_y_m={sensors.center[1]!r}\n")
        writer = csv.writer(fh)
        writer.writerow(["x_m", "y_m"])
        for x, y in sensors.positions:
            writer.writerow([repr(float(x)), repr(float(y))])


def read_sensors_csv(path) -> SensorArray:
    path = Path(path)
    lines = path.read_text().splitlines()
    radius, center = None, (0.0, 0.0)
    rows = []
    for lineno, line in enumerate(lines, start=1):
        if line.startswith("#"):
            fields = dict(item.split("=", 1) for item in line[1:].split() if "=" in item)
            try:
                radius = float(fields["radius_m"])
                center = (float(fields.get("center_x_m", 0.0)), float(fields.get("center_y_m", 0.0)))
            except (KeyError, ValueError) as exc:
                raise FormatError(f"{path}:{lineno}: bad geometry comment ({exc})") from exc
            continue
        if line.strip() in ("", "x_m,y_m"):
            continue
        parts = line.split(",")
        try:
            rows.append((float(parts[0]), float(parts[1])))
        except (IndexError, ValueError) as exc:
            raise FormatError(f"{path}:{lineno}: expected 'x_m,y_m', got {line!r}") from exc
    if not rows:
        raise FormatError(f"{path}: no sensor positions")
    pos = np.array(rows)
    if radius is None:
        radius = float(np.median(np.hypot(pos[:, 0] - center[0], pos[:, 1] - center[1])))
    return SensorArray(pos, radius, center)


# -- matrices -----------------------------------------------------------------

COO_DTYPE = np.dtype([("row", "<u8"), ("col", "<u8"), ("value", "<f8")])


def write_coo(path, matrix, sidecar: dict) -> None:
    """Raw (row u64, col u64, value f64) triples plus a ``.txt`` sidecar."""
    coo = sp.coo_matrix(matrix)
    rec = np.empty(coo.nnz, dtype=COO_DTYPE)
    rec["row"], rec["col"], rec["value"] = coo.row, coo.col, coo.data
    rec.tofile(path)
    meta = dict(sidecar, shape=f"{coo.shape[0]}x{coo.shape[1]}", nnz=coo.nnz)
    Path(str(path) + ".txt").write_text("".join(f"{k} = {v}\n" for k, v in meta.items()))


def read_coo(path, expected_hash: str | None = None) -> sp.csr_matrix:
    meta = {k: v for k, (v, _) in read_key_values(str(path) + ".txt").items()}
    if expected_hash is not None and meta.get("hash") != expected_hash:
        raise FormatError(f"{path}: cached matrix hash {meta.get('hash')} does not match {expected_hash}")
    m, n = (int(v) for v in meta["shape"].split("x"))
    rec = np.fromfile(path, dtype=COO_DTYPE)
    return sp.csr_matrix((rec["value"], (rec["row"].astype(np.int64), rec["col"].astype(np.int64))),
                         shape=(m, n))


def cached_As(path, grid, sensors, cfg, out_of_window="raise"):
    """Load ``A_s`` from ``path`` if its sidecar hash matches, else build and store it."""
    from .forward_td import assemble_As

    key = stable_hash({"grid": grid.geometry_key(), "sensors": sensors.geometry_key(),
                       "config": cfg.__dict__, "out_of_window": out_of_window})
    path = Path(path)
    if path.exists() and Path(str(path) + ".txt").exists():
        try:
            return read_coo(path, key)
        except FormatError:
            pass
    a_s = assemble_As(grid, sensors, cfg, out_of_window)
    write_coo(path, a_s, {"hash": key, "kind": "A_s"})
    return a_s


def write_complex_matrix(path, matrix: np.ndarray, sidecar: dict) -> None:
    """Row-major interleaved (re, im) little-endian f64 plus a ``.txt`` sidecar."""
    m = np.ascontiguousarray(matrix, dtype="<c16")
    m.tofile(path)
    meta = dict(sidecar, shape=f"{m.shape[0]}x{m.shape[1]}", layout="row-major interleaved re,im f64 LE",
                sign_convention=SIGN_CONVENTION)
    Path(str(path) + ".txt").write_text("".join(f"{k} = {v}\n" for k, v in meta.items()))


def read_complex_matrix(path) -> np.ndarray:
    meta = {k: v for k, (v, _) in read_key_values(str(path) + ".txt").items()}
    m, n = (int(v) for v in meta["shape"].split("x"))
    return np.fromfile(path, dtype="<c16").reshape(m, n).astype(complex)


# -- run manifest -------------------------------------------------------------

def write_manifest(out_dir, config: dict, hashes: dict, seed, started: _dt.datetime,
                   extra: dict | None = None, name: str = "manifest.json") -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "tool": "patrecon",
        "version": __version__,
        "config": config,
        "config_hash": stable_hash(config),
        "hashes": hashes,
        "seed": seed,
        "started": started.isoformat(),
        "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }
    if extra:
        manifest.update(extra)
    path = out_dir / name
    path.write_text(json.dumps(manifest, indent=2, default=_jsonable) + "\n")
    return path


def default_out_dir(fallback="patrecon_out") -> Path:
    return Path(os.environ.get("PATRECON_OUT_DIR", fallback))
