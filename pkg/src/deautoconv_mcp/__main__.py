import sys

from deautoconv_mcp.server import main

sys.exit(main())
