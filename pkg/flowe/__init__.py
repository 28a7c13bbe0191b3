#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
FlowE 流等变自监督表征学习
"""
