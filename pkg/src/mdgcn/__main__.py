import sys

from mdgcn.cli import main

sys.exit(main())
