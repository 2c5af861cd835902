import sys

from ipll.cli import main

sys.exit(main())
