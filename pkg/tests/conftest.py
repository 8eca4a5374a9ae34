import pathlib
import sys

_here = pathlib.Path(__file__).parent
sys.path.insert(0, str(_here))
sys.path.insert(0, str(_here.parent / "scripts"))
