import sys

from pacsim.cli import main

sys.exit(main())
