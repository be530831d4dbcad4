"""
utils_tensor_io.py - read and write tensors as HEMT binary or JSON files.

HEMT layout (all little-endian):
    4 bytes   magic b"HEMT"
    u8        version (1)
    u8        rank
    rank*u32  dims
    float32   row-major payload

JSON layout (small test fixtures):
    {"dims": [...], "data": [...]}

Files ending in .json are JSON; everything else is HEMT.
"""

#####################################
# Import Modules
#####################################

# Import packages from Python Standard Library
import hashlib
import json
import pathlib
import struct

# Import external packages
import numpy as np

# Import functions from local modules
from hem.errors import TensorFormatError
from utils.utils_logger import logger

#####################################
# Default Configurations
#####################################

HEMT_MAGIC = b"HEMT"
HEMT_VERSION = 1
_HEADER = struct.Struct("<4sBB")
_PAYLOAD_DTYPE = np.dtype("<f4")

#####################################
# Helper Functions
#####################################


def _fail(msg: str) -> None:
    logger.error(msg)
    raise TensorFormatError(msg)


def _check_payload(dims: list[int], values: np.ndarray, origin: str) -> np.ndarray:
    if any(d < 1 for d in dims):
        _fail(f"{origin}: dims must all be >= 1, got {dims}.")
    expected = int(np.prod(dims)) if dims else 1
    if values.size != expected:
        _fail(f"{origin}: payload length mismatch (dims {dims} need {expected} values, found {values.size}).")
    if not np.all(np.isfinite(values)):
        _fail(f"{origin}: payload contains NaN or Inf.")
    return values.astype(np.float64).reshape(dims)


#####################################
# Encoding
#####################################


def encode_hemt(tensor: np.ndarray) -> bytes:
    """Serialize a tensor to HEMT bytes (values stored as float32)."""
    arr = np.asarray(tensor)
    if arr.ndim > 255:
        _fail(f"HEMT rank is limited to 255, got {arr.ndim}.")
    if not np.all(np.isfinite(arr)):
        _fail("Refusing to write a tensor containing NaN or Inf.")
    header = _HEADER.pack(HEMT_MAGIC, HEMT_VERSION, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + dims + np.ascontiguousarray(arr, dtype=_PAYLOAD_DTYPE).tobytes()


def decode_hemt(blob: bytes, origin: str = "HEMT") -> np.ndarray:
    """Parse HEMT bytes into a float64 array."""
    if len(blob) < _HEADER.size:
        _fail(f"{origin}: file too short for a HEMT header ({len(blob)} bytes).")
    magic, version, rank = _HEADER.unpack_from(blob, 0)
    if magic != HEMT_MAGIC:
        _fail(f"{origin}: bad magic bytes {magic!r}, expected {HEMT_MAGIC!r}.")
    if version != HEMT_VERSION:
        _fail(f"{origin}: unsupported HEMT version {version}, expected {HEMT_VERSION}.")
    dims_end = _HEADER.size + 4 * rank
    if len(blob) < dims_end:
        _fail(f"{origin}: truncated dims (rank {rank}).")
    dims = list(struct.unpack_from(f"<{rank}I", blob, _HEADER.size))
    payload = blob[dims_end:]
    if len(payload) % _PAYLOAD_DTYPE.itemsize:
        _fail(f"{origin}: payload length mismatch ({len(payload)} bytes is not a whole number of float32 values).")
    values = np.frombuffer(payload, dtype=_PAYLOAD_DTYPE)
    return _check_payload(dims, values, origin)


def encode_json(tensor: np.ndarray) -> str:
    arr = np.asarray(tensor, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        _fail("Refusing to write a tensor containing NaN or Inf.")
    return json.dumps({"dims": list(arr.shape), "data": arr.ravel().tolist()})


def decode_json(text: str, origin: str = "JSON") -> np.ndarray:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        _fail(f"{origin}: invalid JSON ({e}).")
    if not isinstance(doc, dict) or "dims" not in doc or "data" not in doc:
        _fail(f'{origin}: expected an object with "dims" and "data".')
    dims = doc["dims"]
    if not isinstance(dims, list) or not all(isinstance(d, int) and not isinstance(d, bool) for d in dims):
        _fail(f"{origin}: dims must be a list of integers, got {dims!r}.")
    try:
        values = np.asarray(doc["data"], dtype=np.float64).ravel()
    except (TypeError, ValueError) as e:
        _fail(f"{origin}: data must be a flat list of numbers ({e}).")
    return _check_payload(dims, values, origin)


#####################################
# File Functions
#####################################


def is_json_path(path: pathlib.Path) -> bool:
    return pathlib.Path(path).suffix.lower() == ".json"


def read_tensor(path: pathlib.Path) -> np.ndarray:
    """Read a HEMT or JSON tensor file into a float64 array."""
    path = pathlib.Path(path)
    logger.info(f"Reading tensor file: {path}")
    try:
        blob = path.read_bytes()
    except FileNotFoundError:
        _fail(f"Tensor file not found: {path}")
    if blob[:4] == HEMT_MAGIC or not is_json_path(path):
        tensor = decode_hemt(blob, str(path))
    else:
        try:
            text = blob.decode("utf-8")
        except UnicodeDecodeError as e:
            _fail(f"{path}: JSON tensor is not valid UTF-8 ({e}).")
        tensor = decode_json(text, str(path))
    logger.debug(f"Read tensor with dims {list(tensor.shape)} from {path}")
    return tensor


def write_tensor(path: pathlib.Path, tensor: np.ndarray) -> bytes:
    """Write a tensor by file suffix; returns the bytes written."""
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = encode_json(tensor).encode("utf-8") if is_json_path(path) else encode_hemt(tensor)
    path.write_bytes(blob)
    logger.info(f"Wrote tensor with dims {list(np.shape(tensor))} to {path}")
    return blob


def checksum(blob: bytes) -> str:
    """SHA-256 hex digest."""
    return hashlib.sha256(blob).hexdigest()
