"""Allow ``python -m moeperf`` as an alternative to the console script."""

from .cli import console_main

console_main()
