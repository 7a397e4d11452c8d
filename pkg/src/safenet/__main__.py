from safenet.cli import main

raise SystemExit(main())
