import sdfuzz.analyze
import sdfuzz.fuzzer
import sdfuzz.report

__version__ = "0.1.0"
