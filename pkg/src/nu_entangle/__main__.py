import sys

from nu_entangle.cli import main

sys.exit(main())
