package store

import (
	"path/filepath"
	"strings"
)

const Limit = 4

type Store struct {
	Root string
}

func Clamp(v, lo, hi int) int {
	if v < lo {
		return lo
	}
	if v > hi {
		return hi
	}
	return v
}

func (s *Store) PathFor(name string) string {
	clean := func(part string) string {
		return strings.ReplaceAll(part, "..", "")
	}
	return filepath.Join(s.Root, clean(name))
}
