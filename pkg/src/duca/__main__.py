import sys

from duca.cli import main

sys.exit(main())
