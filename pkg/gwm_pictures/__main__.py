import sys

from gwm_pictures.cli import main

sys.exit(main())
