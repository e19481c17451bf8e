import sys

from catsd.cli import main

sys.exit(main())
