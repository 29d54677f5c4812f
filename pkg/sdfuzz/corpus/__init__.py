import pathlib

CORPUS_DIR = pathlib.Path(__file__).parent
BENCH_DIR = CORPUS_DIR / "bench"


def fixture(name: str):
    """Paths of the bytecode and ABI descriptor of a bundled contract."""
    bytecode = CORPUS_DIR / f"{name}.easm"
    abi = CORPUS_DIR / f"{name}.abi.json"
    if not bytecode.exists():
        raise FileNotFoundError(f"No bundled contract named {name}")
    return bytecode, abi
