import sys

from ilradmm.experiments.cli import main

sys.exit(main())
