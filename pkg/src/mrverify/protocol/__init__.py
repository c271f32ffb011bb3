"""Wire format, edge server and client simulator."""
