import sys

from tools_georef.cli import main

sys.exit(main())
