import sys

from deautoconv.cli import main

sys.exit(main())
